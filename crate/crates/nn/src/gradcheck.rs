//! Central finite-difference checks of analytic gradients.

use glioaug_core::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;

/// One compared coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Picks `count` random `(parameter, index)` coordinates.
pub fn sample_coordinates<T: Scalar>(store: &ParamStore<T>, count: usize, seed: u64) -> Vec<(String, usize)> {
    let mut all: Vec<(String, usize)> = store
        .params()
        .iter()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(count);
    all
}

/// Coordinates with a non-zero analytic gradient, in seeded random order.
/// Structurally zero entries (weights on inputs that are always zero) are
/// left out because a difference check on them verifies nothing.
pub fn nonzero_coordinates<T: Scalar>(analytic: &[(String, crate::Tensor<T>)], seed: u64) -> Vec<(String, usize)> {
    let mut all: Vec<(String, usize)> = analytic
        .iter()
        .flat_map(|(k, t)| {
            t.data()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(move |(i, _)| (k.clone(), i))
        })
        .collect();
    all.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all
}

/// Compares `analytic(store)` against `(f(w + h) - f(w - h)) / 2h` at each coordinate.
pub fn check<T: Scalar>(
    store: &ParamStore<T>,
    coords: &[(String, usize)],
    step: f64,
    loss: impl Fn(&ParamStore<T>) -> T,
    analytic: &[(String, crate::Tensor<T>)],
) -> Vec<GradSample> {
    coords
        .iter()
        .map(|(name, i)| {
            let mut probe = store.clone();
            let base = probe.param(name).expect("param").data()[*i];
            probe.param_mut(name).unwrap().data_mut()[*i] = base + T::lit(step);
            let up = loss(&probe).as_f64();
            probe.param_mut(name).unwrap().data_mut()[*i] = base - T::lit(step);
            let down = loss(&probe).as_f64();
            let a = analytic
                .iter()
                .find(|(k, _)| k == name)
                .map_or(0.0, |(_, g)| g.data()[*i].as_f64());
            GradSample {
                name: name.clone(),
                index: *i,
                analytic: a,
                numeric: (up - down) / (2.0 * step),
            }
        })
        .collect()
}

/// Like [`check`], but only keeps coordinates whose `±step` probes stay on
/// the same branch of every non-smooth op, where central differences are a
/// valid oracle. `eval` returns the loss and the graph's
/// [`branch_fingerprint`](crate::Graph::branch_fingerprint). Walks
/// `candidates` in order until `want` coordinates qualify; returns the
/// accepted samples and how many candidates were skipped.
pub fn check_smooth<T: Scalar>(
    store: &ParamStore<T>,
    candidates: &[(String, usize)],
    want: usize,
    step: f64,
    eval: impl Fn(&ParamStore<T>) -> (T, u64),
    analytic: &[(String, crate::Tensor<T>)],
) -> (Vec<GradSample>, usize) {
    let (_, base_print) = eval(store);
    let mut out = Vec::new();
    let mut skipped = 0;
    for (name, i) in candidates {
        if out.len() == want {
            break;
        }
        let mut probe = store.clone();
        let base = probe.param(name).expect("param").data()[*i];
        probe.param_mut(name).unwrap().data_mut()[*i] = base + T::lit(step);
        let (up, up_print) = eval(&probe);
        probe.param_mut(name).unwrap().data_mut()[*i] = base - T::lit(step);
        let (down, down_print) = eval(&probe);
        if up_print != base_print || down_print != base_print {
            skipped += 1;
            continue;
        }
        let a = analytic
            .iter()
            .find(|(k, _)| k == name)
            .map_or(0.0, |(_, g)| g.data()[*i].as_f64());
        out.push(GradSample {
            name: name.clone(),
            index: *i,
            analytic: a,
            numeric: (up.as_f64() - down.as_f64()) / (2.0 * step),
        });
    }
    (out, skipped)
}
