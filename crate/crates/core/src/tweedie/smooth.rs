/// Values on a regular 2-D or 3-D site grid, row-major (last index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Option<Self> {
        (shape.iter().product::<usize>() == values.len()).then_some(Grid { shape, values })
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for d in (0..self.shape.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }
}

/// Moving average over a `window`-wide box, averaging only in-bounds
/// neighbours. Even windows extend one cell further forward than backward.
pub fn smooth_map(grid: &Grid, window: usize) -> Grid {
    let window = window.max(1);
    let back = (window - 1) / 2;
    let fwd = window - 1 - back;
    let strides = grid.strides();
    let dims = grid.shape.len();
    let mut out = vec![0.0; grid.values.len()];
    let mut idx = vec![0usize; dims];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in 0..dims {
            idx[d] = rem / strides[d];
            rem %= strides[d];
        }
        let ranges: Vec<(usize, usize)> = (0..dims)
            .map(|d| (idx[d].saturating_sub(back), (idx[d] + fwd).min(grid.shape[d] - 1)))
            .collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let off: usize = cur.iter().zip(&strides).map(|(c, s)| c * s).sum();
            sum += grid.values[off];
            count += 1;
            for d in (0..dims).rev() {
                if cur[d] < ranges[d].1 {
                    cur[d] += 1;
                    continue 'outer;
                }
                cur[d] = ranges[d].0;
            }
            break;
        }
        *slot = sum / count as f64;
    }
    Grid {
        shape: grid.shape.clone(),
        values: out,
    }
}
