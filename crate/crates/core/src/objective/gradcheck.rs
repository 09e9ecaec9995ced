use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::loss::combined_loss_on;
use crate::encoders::HyperConfig;
use crate::gradcore::{Tape, Tensor};

const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are judged on an absolute scale.
const FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub b: usize,
    pub m: usize,
    pub d: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub configs: Vec<GradCheckConfig>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.configs.is_empty() && self.max_rel_err < tol
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

fn loss_of(inputs: &[Tensor; 3], m: usize, tau: f64, epsilon: f64, symmetric: bool) -> Option<f64> {
    let mut tape = Tape::new();
    let [c, b, g] = inputs.clone().map(|t| tape.constant(t));
    let l = combined_loss_on(&mut tape, c, Some(b), Some(g), m, tau, epsilon, symmetric).ok()?;
    Some(tape.value(l.total).item())
}

/// Compares the analytic gradient of the combined loss with respect to every
/// latent entry against central differences, over 20 random shapes with
/// `B <= 4`, `M <= 3` and `d <= 8`. Temperature, weight and direction come
/// from `hyper`. Failures are reported, not raised.
pub fn check_gradients(hyper: &HyperConfig, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for _ in 0..20 {
        let b = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let d = rng.random_range(2..=8);
        let inputs = [gaussian(&mut rng, b, d), gaussian(&mut rng, b, d), gaussian(&mut rng, b * m, d)];
        let (tau, eps, sym) = (hyper.tau, hyper.epsilon, hyper.symmetric);

        let mut tape = Tape::new();
        let vars = inputs.clone().map(|t| tape.param(t));
        let analytic = combined_loss_on(&mut tape, vars[0], Some(vars[1]), Some(vars[2]), m, tau, eps, sym)
            .and_then(|l| tape.backward(l.total));

        let mut max_err = 0.0f64;
        let mut entries = 0;
        match analytic {
            Ok(grads) => {
                for (k, var) in vars.iter().enumerate() {
                    let g = grads.get(*var).expect("leaf gradient");
                    for j in 0..inputs[k].len() {
                        let mut plus = inputs.clone();
                        plus[k].data_mut()[j] += STEP;
                        let mut minus = inputs.clone();
                        minus[k].data_mut()[j] -= STEP;
                        let numeric = match (loss_of(&plus, m, tau, eps, sym), loss_of(&minus, m, tau, eps, sym)) {
                            (Some(p), Some(q)) => (p - q) / (2.0 * STEP),
                            _ => f64::NAN,
                        };
                        let a = g.data()[j];
                        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                        max_err = if err.is_nan() { f64::INFINITY } else { max_err.max(err) };
                        entries += 1;
                    }
                }
            }
            Err(_) => max_err = f64::INFINITY,
        }
        report.max_rel_err = report.max_rel_err.max(max_err);
        report.configs.push(GradCheckConfig {
            b,
            m,
            d,
            tau,
            epsilon: eps,
            entries,
            max_rel_err: max_err,
        });
    }
    report
}
