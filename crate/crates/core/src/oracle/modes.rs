//! Local-mode counting on 2-D grids.

/// Local maxima of a row-major `rows × cols` grid under 8-neighbour
/// adjacency. Runs of equal values form one plateau, which counts once if no
/// neighbour of the plateau is higher. Cells below `1e-6 · max` are ignored.
/// Returns one representative cell per mode.
pub fn local_modes(values: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    assert_eq!(values.len(), rows * cols, "grid shape does not match the data");
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let floor = 1e-6 * max;
    let neighbours = |r: usize, c: usize| {
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if (dr, dc) != (0, 0) && (0..rows as i64).contains(&nr) && (0..cols as i64).contains(&nc) {
                    out.push(nr as usize * cols + nc as usize);
                }
            }
        }
        out
    };
    let mut seen = vec![false; values.len()];
    let mut modes = Vec::new();
    for start in 0..values.len() {
        if seen[start] || values[start] < floor {
            continue;
        }
        let v = values[start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut is_mode = true;
        while let Some(i) = stack.pop() {
            for j in neighbours(i / cols, i % cols) {
                if values[j] > v {
                    is_mode = false;
                } else if values[j] == v && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if is_mode {
            modes.push((start / cols, start % cols));
        }
    }
    modes
}

pub fn count_local_modes(values: &[f64], rows: usize, cols: usize) -> usize {
    local_modes(values, rows, cols).len()
}
