use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor, Var};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(vec![format!("tau = {tau} must be positive")]))
    }
}

fn mean_diff(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ma = tape.mean(a)?;
    let mb = tape.mean(b)?;
    tape.sub(ma, mb)
}

/// Clip-to-text InfoNCE over the cosine similarities of `chi` `[B x d]` and
/// `beta` `[B x d]`. Row `i` of each is a positive pair; the positive stays in
/// the denominator.
pub fn info_nce_on(tape: &mut Tape, chi: Var, beta: Var, tau: f64, symmetric: bool) -> Result<Var> {
    check_tau(tau)?;
    let b = tape.value(chi).rows();
    if tape.value(beta).rows() != b {
        return Err(Error::Dimension {
            op: "info_nce",
            left: tape.value(chi).shape().to_vec(),
            right: tape.value(beta).shape().to_vec(),
        });
    }
    let s = tape.cosine_matrix(chi, beta)?;
    let logits = tape.scale(s, 1.0 / tau)?;
    let diag: Vec<Vec<usize>> = (0..b).map(|i| vec![i]).collect();
    let pos = tape.gather_cols(logits, diag.clone())?;
    let lse = tape.logsumexp_rows(logits)?;
    let forward = mean_diff(tape, lse, pos)?;
    if !symmetric {
        return Ok(forward);
    }
    let lt = tape.transpose(logits)?;
    let pos_t = tape.gather_cols(lt, diag)?;
    let lse_t = tape.logsumexp_rows(lt)?;
    let backward = mean_diff(tape, lse_t, pos_t)?;
    let both = tape.add(forward, backward)?;
    tape.scale(both, 0.5)
}

/// Clip-to-text MIL-NCE. `gamma` is `[B * m x d]` with the `m` texts of pair
/// `i` in rows `i * m .. (i + 1) * m`.
pub fn mil_nce_on(tape: &mut Tape, chi: Var, gamma: Var, m: usize, tau: f64, symmetric: bool) -> Result<Var> {
    check_tau(tau)?;
    if m == 0 {
        return Err(Error::EmptyInput("mil_nce positive group"));
    }
    let b = tape.value(chi).rows();
    if tape.value(gamma).rows() != b * m {
        return Err(Error::Dimension {
            op: "mil_nce",
            left: tape.value(chi).shape().to_vec(),
            right: tape.value(gamma).shape().to_vec(),
        });
    }
    let s = tape.cosine_matrix(chi, gamma)?;
    let logits = tape.scale(s, 1.0 / tau)?;
    let groups: Vec<Vec<usize>> = (0..b).map(|i| (i * m..(i + 1) * m).collect()).collect();
    let pos = tape.gather_cols(logits, groups)?;
    let pos_lse = tape.logsumexp_rows(pos)?;
    let all_lse = tape.logsumexp_rows(logits)?;
    let forward = mean_diff(tape, all_lse, pos_lse)?;
    if !symmetric {
        return Ok(forward);
    }
    let lt = tape.transpose(logits)?;
    let own: Vec<Vec<usize>> = (0..b * m).map(|j| vec![j / m]).collect();
    let pos_t = tape.gather_cols(lt, own)?;
    let lse_t = tape.logsumexp_rows(lt)?;
    let backward = mean_diff(tape, lse_t, pos_t)?;
    let both = tape.add(forward, backward)?;
    tape.scale(both, 0.5)
}

/// Handles of the combined objective and its parts. A part whose weight is
/// zero is not built.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub info_nce: Option<Var>,
    pub mil_nce: Option<Var>,
}

/// `epsilon * InfoNCE(chi, beta) + (1 - epsilon) * MIL-NCE(chi, gamma)`.
pub fn combined_loss_on(
    tape: &mut Tape,
    chi: Var,
    beta: Option<Var>,
    gamma: Option<Var>,
    m: usize,
    tau: f64,
    epsilon: f64,
    symmetric: bool,
) -> Result<LossVars> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(vec![format!("epsilon = {epsilon} is outside [0, 1]")]));
    }
    let info = if epsilon > 0.0 {
        let beta = beta.ok_or_else(|| Error::contract("epsilon > 0 needs A-view latents"))?;
        Some(info_nce_on(tape, chi, beta, tau, symmetric)?)
    } else {
        None
    };
    let mil = if epsilon < 1.0 {
        let gamma = gamma.ok_or_else(|| Error::contract("epsilon < 1 needs W-view latents"))?;
        Some(mil_nce_on(tape, chi, gamma, m, tau, symmetric)?)
    } else {
        None
    };
    let total = match (info, mil) {
        (Some(i), Some(w)) => {
            let a = tape.scale(i, epsilon)?;
            let b = tape.scale(w, 1.0 - epsilon)?;
            tape.add(a, b)?
        }
        (Some(i), None) => i,
        (None, Some(w)) => w,
        (None, None) => unreachable!("epsilon is in [0, 1]"),
    };
    Ok(LossVars {
        total,
        info_nce: info,
        mil_nce: mil,
    })
}

/// InfoNCE of fixed latents.
pub fn info_nce(chi: &Tensor, beta: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (c, b) = (tape.constant(chi.clone()), tape.constant(beta.clone()));
    let l = info_nce_on(&mut tape, c, b, tau, false)?;
    Ok(tape.value(l).item())
}

/// MIL-NCE of fixed latents; `gamma` is `[B * m x d]`.
pub fn mil_nce(chi: &Tensor, gamma: &Tensor, m: usize, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (c, g) = (tape.constant(chi.clone()), tape.constant(gamma.clone()));
    let l = mil_nce_on(&mut tape, c, g, m, tau, false)?;
    Ok(tape.value(l).item())
}

pub fn combined_loss(chi: &Tensor, beta: &Tensor, gamma: &Tensor, m: usize, tau: f64, epsilon: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let c = tape.constant(chi.clone());
    let b = tape.constant(beta.clone());
    let g = tape.constant(gamma.clone());
    let l = combined_loss_on(&mut tape, c, Some(b), Some(g), m, tau, epsilon, false)?;
    Ok(tape.value(l.total).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let x = Tensor::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let y = Tensor::from_rows(&[[1.0, 0.5, 0.1]]).unwrap();
        assert_eq!(info_nce(&x, &y, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn identical_latents_give_log_b() {
        let rows = vec![[1.0, 2.0]; 5];
        let x = Tensor::from_rows(&rows).unwrap();
        assert!((info_nce(&x, &x, 0.3).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_tau_and_epsilon_are_rejected() {
        let x = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(info_nce(&x, &x, 0.0).is_err());
        assert!(combined_loss(&x, &x, &x, 1, 0.3, 1.5).is_err());
    }
}
