//! Small grid constructors shared by scans and the CLI.

use alloc::vec::Vec;

use crate::prelude::*;

/// `n` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return alloc::vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// `n` logarithmically spaced values from `start` to `end` inclusive.
/// Both bounds must be positive.
pub fn logspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if !(start > 0.0 && end > 0.0) {
        return Vec::new();
    }
    linspace(start.ln(), end.ln(), n)
        .into_iter()
        .map(|v| v.exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let g = linspace(1.0, 3.0, 5);
        assert_eq!(g, alloc::vec![1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn logspace_is_geometric() {
        let g = logspace(1e-12, 1e-10, 3);
        assert!((g[1] - 1e-11).abs() < 1e-22);
    }
}
