use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Graph, Mode, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` at the maximum.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare reverse-mode gradients of the scalar built by `loss` against
/// central differences.
///
/// `loss` records its computation on the graph it is handed, binding inputs
/// through [`Graph::param`]. At most `max_coords` coordinates are sampled
/// (all of them when there are fewer). The error per coordinate is
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps coordinates with vanishing
/// gradients from turning rounding noise into large ratios.
pub fn grad_check<L>(
    store: &ParamStore<f64>,
    loss: L,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store, Mode::Eval, seed);
    let out = loss(&mut g)?;
    g.check_finite()?;
    g.backward(out)?;
    let mut analytic = Gradients::zeros_like(store);
    g.accumulate_param_grads(&mut analytic);
    if !analytic.is_finite() {
        return Err(Error::NonFinite {
            op: "backward",
            node: out.index(),
        });
    }
    drop(g);

    let sizes: Vec<usize> = store.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s, Mode::Eval, seed);
        let out = loss(&mut g)?;
        g.check_finite()?;
        Ok(g.value(out).item())
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for flat in picks {
        let (mut pid, mut off) = (0, flat);
        while off >= sizes[pid] {
            off -= sizes[pid];
            pid += 1;
        }
        let id = work.ids().nth(pid).expect("in range");
        let orig = work.get(id).data()[off];
        work.get_mut(id).data_mut()[off] = orig + eps;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[off] = orig - eps;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[off] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(id)[off];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.coords_checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((work.name(id).to_string(), off, a, numeric));
            }
        }
    }
    Ok(report)
}
