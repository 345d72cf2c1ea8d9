use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max|g_ad - g_fd| / (max|g_fd| + 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the one-sided slopes disagree (a kink).
    pub excluded: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

/// Compares the autodiff gradient of the scalar built by `f` against
/// central differences at every coordinate of `x`.
///
/// `f` receives a fresh 64-bit graph and the leaf holding `x`, and returns
/// the scalar loss node.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    gradcheck_coords(f, x, step, &coords)
}

/// [`finite_diff_gradcheck`] restricted to the listed coordinates.
pub fn gradcheck_coords<F>(f: F, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    let eval = |xv: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.constant(xv.clone());
        let out = f(&mut g, leaf)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let leaf = g.param(x.clone());
    let out = f(&mut g, leaf)?;
    let f0 = g.value(out).item()?;
    g.backward_wrt(out, &[leaf])?;
    let ad = g
        .grad(leaf)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut max_diff = 0.0f64;
    let mut max_fd = 0.0f64;
    let mut checked = 0;
    let mut excluded = 0;
    let mut probe = x.clone();
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::Invalid(format!("coordinate {i} out of range")));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let fwd = (fp - f0) / step;
        let bwd = (f0 - fm) / step;
        let scale = fwd.abs().max(bwd.abs());
        if (fwd - bwd).abs() > 0.05 * scale && (fwd - bwd).abs() > 1e-6 {
            excluded += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * step);
        max_diff = max_diff.max((ad[i] - fd).abs());
        max_fd = max_fd.max(fd.abs());
        checked += 1;
    }
    Ok(GradCheck {
        max_rel_error: max_diff / (max_fd + 1e-8),
        checked,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact() {
        let x = Tensor::from_fn([5], |i| i as f64 - 2.0);
        let w = Tensor::from_fn([5], |i| 0.3 * i as f64 + 0.1);
        let r = finite_diff_gradcheck(
            |g, x| {
                let wn = g.constant(w.clone());
                let m = g.mul(x, wn)?;
                Ok(g.sum(m))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 5);
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_fn([6], |i| (i as f64 * 1.3).sin());
        let r = finite_diff_gradcheck(
            |g, x| {
                let m = g.mul(x, x)?;
                Ok(g.sum(m))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::new([3], vec![0.5, 0.0, -1.0]).unwrap();
        let r = finite_diff_gradcheck(
            |g, x| {
                let y = g.relu(x);
                Ok(g.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }
}
