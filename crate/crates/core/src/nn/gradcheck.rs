use super::params::{Grads, ParamStore};
use crate::error::Result;

/// Components whose analytic and numeric gradients are both below this are
/// compared on absolute error, so round-off on vanishing gradients does not
/// register as a relative failure.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel <= self.tolerance
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients against central differences for every
/// parameter of every group.
///
/// `f` must be a deterministic function of the parameters, returning the
/// loss and its gradients. The store is perturbed in place and restored.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, tolerance: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Grads)>,
{
    let (_, analytic) = f(store)?;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut groups = Vec::with_capacity(ids.len());
    let mut max_rel: f64 = 0.0;
    for id in ids {
        let n = store.get(id).len();
        let mut g = GroupError {
            name: store.get(id).name.clone(),
            max_rel: 0.0,
            max_abs: 0.0,
            checked: n,
        };
        for k in 0..n {
            let orig = store.get(id).values[k];
            store.get_mut(id).values[k] = orig + eps;
            let (plus, _) = f(store)?;
            store.get_mut(id).values[k] = orig - eps;
            let (minus, _) = f(store)?;
            store.get_mut(id).values[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id)[k];
            g.max_rel = g.max_rel.max(rel_error(a, numeric));
            g.max_abs = g.max_abs.max((a - numeric).abs());
        }
        max_rel = max_rel.max(g.max_rel);
        groups.push(g);
    }
    Ok(GradCheckReport {
        groups,
        max_rel,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use crate::nn::Tape;
    use crate::util::seeded;

    fn linear_loss(store: &ParamStore) -> Result<(f64, Grads)> {
        let w = store.find("w").unwrap();
        let mut t = Tape::new(store);
        let x = t.input(&[0.5, -1.0, 2.0]);
        let y = t.matvec(w, x)?;
        let c = t.input(&[1.0, -3.0]);
        let l = t.dot(y, c)?;
        let g = t.backward(l)?;
        Ok((t.scalar(l), g))
    }

    #[test]
    fn linear_model_is_exact() {
        let mut store = ParamStore::new();
        store.add("w", 2, 3, Init::Uniform(1.0), &mut seeded(3));
        let r = grad_check(&mut store, 1e-5, 1e-4, linear_loss).unwrap();
        assert!(r.max_rel < 1e-9, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = ParamStore::new();
        let w = store.add("w", 2, 3, Init::Uniform(1.0), &mut seeded(3));
        let r = grad_check(&mut store, 1e-5, 1e-4, |s| {
            let (l, mut g) = linear_loss(s)?;
            g.get_mut(w)[4] *= 1.1;
            Ok((l, g))
        })
        .unwrap();
        assert!(!r.passed());
        assert!(r.max_rel > 1e-2);
    }
}
