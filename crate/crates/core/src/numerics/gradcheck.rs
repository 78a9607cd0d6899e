//! Finite-difference verification of the analytic adjoints.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};
use crate::scalar::Real;

/// Compares analytic parameter gradients of `f` against central differences.
///
/// At most `max_coords` coordinates per parameter are sampled (all of them if
/// the parameter is smaller). Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)` observed.
pub fn gradient_check<T, F, R>(store: &mut ParamStore<T>, h: f64, max_coords: usize, rng: &mut R, mut f: F) -> Result<f64>
where
    T: Real,
    R: Rng + ?Sized,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;

    let eval = |store: &ParamStore<T>, f: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        Ok(g.value(out).item().as_f64())
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).data().len();
        let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { sample(rng, n, max_coords).into_vec() };
        for c in coords {
            let original = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = original + T::lit(h);
            let plus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[c] = original - T::lit(h);
            let minus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: "gradient_check" });
            }
            let analytic = store.grad(id).data()[c].as_f64();
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
