//! Masked categorical distributions and epsilon-greedy selection.

use rand::Rng;

use super::NnetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Softmax over the entries where `mask` is true; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, NnetError> {
    if logits.len() != mask.len() {
        return Err(NnetError::Shape(format!("{} logits, {} mask entries", logits.len(), mask.len())));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnetError::EmptySupport);
    }
    if !max.is_finite() {
        return Err(NnetError::NonFinite("logits".into()));
    }
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    Ok(p)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    masked_softmax(logits, &vec![true; logits.len()]).expect("unmasked softmax of finite logits")
}

/// Entropy (nats) of a distribution produced by [`masked_softmax`].
pub fn categorical_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Gradient of `log p[action]` w.r.t. the logits.
pub fn log_prob_grad(p: &[f64], action: usize) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(j, &pj)| if j == action { 1.0 - pj } else { -pj })
        .collect()
}

/// Gradient of the entropy w.r.t. the logits: `-p_j (ln p_j + H)`.
pub fn entropy_grad(p: &[f64]) -> Vec<f64> {
    let h = categorical_entropy(p);
    p.iter()
        .map(|&pj| if pj > 0.0 { -pj * (pj.ln() + h) } else { 0.0 })
        .collect()
}

pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Training: uniform over unmasked entries with probability `eps`, otherwise
/// the arg-max. Evaluation: always the arg-max.
pub fn softmax_sample_eps<R: Rng>(
    logits: &[f64],
    mask: &[bool],
    eps: f64,
    mode: SampleMode,
    rng: &mut R,
) -> Result<usize, NnetError> {
    if logits.len() != mask.len() {
        return Err(NnetError::Shape(format!("{} logits, {} mask entries", logits.len(), mask.len())));
    }
    let best = argmax_masked(logits, mask).ok_or(NnetError::EmptySupport)?;
    if mode == SampleMode::Train && eps > 0.0 && rng.random::<f64>() < eps {
        let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        return Ok(allowed[rng.random_range(0..allowed.len())]);
    }
    Ok(best)
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_entries_are_exactly_zero() {
        let p = masked_softmax(&[1.0, 5.0, -2.0, 0.3], &[true, false, true, true]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(masked_softmax(&[1.0], &[false]).unwrap_err(), NnetError::EmptySupport);
    }

    #[test]
    fn eps_zero_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = [0.1, 0.9, 0.3];
        for _ in 0..100 {
            assert_eq!(softmax_sample_eps(&logits, &[true; 3], 0.0, SampleMode::Train, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn single_unmasked_entry_always_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = [false, false, true, false];
        for _ in 0..200 {
            assert_eq!(softmax_sample_eps(&[9.0, 8.0, -3.0, 1.0], &mask, 1.0, SampleMode::Train, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn eps_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = [5.0, 0.0, 1.0, -1.0, 2.0];
        let mask = [true, true, false, true, true];
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[softmax_sample_eps(&logits, &mask, 1.0, SampleMode::Train, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        for i in [0, 1, 3, 4] {
            let f = counts[i] as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.01, "entry {i}: {f}");
        }
    }

    #[test]
    fn eval_mode_ignores_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert_eq!(softmax_sample_eps(&[0.0, 1.0], &[true, true], 1.0, SampleMode::Eval, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn analytic_grads_match_differences() {
        let logits = [0.3, -1.2, 0.8, 0.1];
        let mask = [true, true, false, true];
        let p = masked_softmax(&logits, &mask).unwrap();
        let g_lp = log_prob_grad(&p, 3);
        let g_h = entropy_grad(&p);
        let h = 1e-6;
        for j in [0, 1, 3] {
            let mut up = logits;
            up[j] += h;
            let mut dn = logits;
            dn[j] -= h;
            let pu = masked_softmax(&up, &mask).unwrap();
            let pd = masked_softmax(&dn, &mask).unwrap();
            let num_lp = (pu[3].ln() - pd[3].ln()) / (2.0 * h);
            let num_h = (categorical_entropy(&pu) - categorical_entropy(&pd)) / (2.0 * h);
            assert!((num_lp - g_lp[j]).abs() < 1e-8);
            assert!((num_h - g_h[j]).abs() < 1e-8);
        }
        assert_eq!(g_lp[2], 0.0);
        assert_eq!(g_h[2], 0.0);
    }
}
