use candle_core::{DType, Tensor, D};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::{CondModality, ConditionBundle, VelocityModel};
use crate::embed::StyleEmbedding;
use crate::error::{Error, Result};
use crate::nn;

/// `x_t = (1 − t)·eps + t·x1` for `(B, F, C)` tensors and one `t` per item.
pub fn interpolate(x1: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    let b = x1.dim(0)?;
    if t.len() != b {
        return Err(Error::ShapeMismatch(format!("{} times for a batch of {b}", t.len())));
    }
    let tt = nn::tensor_from_f64(t.to_vec(), &[b, 1, 1], x1.dtype())?;
    let one_minus = nn::tensor_from_f64(t.iter().map(|v| 1.0 - v).collect(), &[b, 1, 1], x1.dtype())?;
    Ok((eps.broadcast_mul(&one_minus)? + x1.broadcast_mul(&tt)?)?)
}

/// Mean squared error between the predicted velocity at `x_t` and the
/// straight-path target `x1 − eps`. With a mask, each sequence's error is
/// averaged over its own valid frames and the batch loss is the mean over
/// sequences.
pub fn flow_match_loss(
    model: &dyn VelocityModel,
    x1: &Tensor,
    eps: &Tensor,
    conds: &[ConditionBundle],
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    if x1.dims() != eps.dims() {
        return Err(Error::ShapeMismatch(format!("x1 {:?} vs eps {:?}", x1.dims(), eps.dims())));
    }
    let t: Vec<f64> = conds.iter().map(|c| c.t).collect();
    let x_t = interpolate(x1, eps, &t)?;
    let target = (x1 - eps)?;
    let pred = model.velocity(&x_t, conds, mask)?;
    let err = (pred - target)?.sqr()?.mean(D::Minus1)?;
    match mask {
        None => Ok(err.mean_all()?),
        Some(m) => {
            let m = m.to_dtype(err.dtype())?;
            let per = ((err * &m)?.sum(1)? / m.sum(1)?)?;
            Ok(per.mean_all()?)
        }
    }
}

/// Null with probability `cfg_dropout_prob`, else audio with probability
/// `modality_ratio`, else text. Two uniforms are drawn every call. Without an
/// audio embedding the text embedding is used.
pub fn select_condition(
    text: &StyleEmbedding,
    audio: Option<&StyleEmbedding>,
    modality_ratio: f64,
    cfg_dropout_prob: f64,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> ConditionBundle {
    let drop = rng.random::<f64>() < cfg_dropout_prob;
    let use_audio = rng.random::<f64>() < modality_ratio;
    if drop {
        return ConditionBundle::null(t);
    }
    match (use_audio, audio) {
        (true, Some(a)) => ConditionBundle { style: Some(a.values().to_vec()), t, modality: CondModality::Audio },
        _ => ConditionBundle { style: Some(text.values().to_vec()), t, modality: CondModality::Text },
    }
}

/// Euler integration of the velocity field from pure noise at `t = 0` to
/// `t = 1`. Guidance mixes in the null-conditioned velocity as
/// `v_null + s·(v_cond − v_null)`; at `s = 1` the null branch is skipped.
/// Returns `(1, frames, channels)`.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &dyn VelocityModel,
    style: Option<&[f64]>,
    frames: usize,
    channels: usize,
    steps: usize,
    cfg_scale: f64,
    dtype: DType,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::InvalidArgument("sampler needs at least one step".into()));
    }
    let mut x = nn::randn(&[1, frames, channels], dtype, rng)?;
    let dt = 1.0 / steps as f64;
    let modality = if style.is_some() { CondModality::Text } else { CondModality::Null };
    for k in 0..steps {
        let t = k as f64 * dt;
        let cond = ConditionBundle { style: style.map(<[f64]>::to_vec), t, modality };
        let v_cond = model.velocity(&x, &[cond], None)?;
        let v = if cfg_scale == 1.0 || style.is_none() {
            v_cond
        } else {
            let v_null = model.velocity(&x, &[ConditionBundle::null(t)], None)?;
            (&v_null + ((v_cond - &v_null)? * cfg_scale)?)?
        };
        x = (x + (v * dt)?)?.detach();
        let bad = nn::scalar(&x.abs()?.max_all()?)?;
        if !bad.is_finite() {
            return Err(Error::NumericalDivergence(format!("sampling diverged at step {k}")));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::{AccompDit, DitConfig};
    use crate::embed::Modality;
    use crate::nn::{check_gradients, device};
    use rand::SeedableRng;

    /// Returns a fixed tensor whatever the input.
    struct Constant(Tensor);
    impl VelocityModel for Constant {
        fn velocity(&self, x: &Tensor, _: &[ConditionBundle], _: Option<&Tensor>) -> Result<Tensor> {
            Ok(self.0.broadcast_as(x.dims())?.contiguous()?)
        }
    }

    /// Knows `x1` and `eps` and returns the exact target.
    struct Perfect(Tensor);
    impl VelocityModel for Perfect {
        fn velocity(&self, _: &Tensor, _: &[ConditionBundle], _: Option<&Tensor>) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    /// Ignores the style; output depends on whether the style is null.
    struct NullAware;
    impl VelocityModel for NullAware {
        fn velocity(&self, x: &Tensor, c: &[ConditionBundle], _: Option<&Tensor>) -> Result<Tensor> {
            let k = if c[0].style.is_some() { 1.0 } else { -0.5 };
            Ok((x.ones_like()? * k)?)
        }
    }

    fn emb(v: f64, m: Modality) -> StyleEmbedding {
        StyleEmbedding::from_raw(vec![v, 1.0], m)
    }

    #[test]
    fn path_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x1 = nn::randn(&[2, 3, 4], DType::F64, &mut rng).unwrap();
        let eps = nn::randn(&[2, 3, 4], DType::F64, &mut rng).unwrap();
        let at0 = interpolate(&x1, &eps, &[0.0, 0.0]).unwrap();
        let at1 = interpolate(&x1, &eps, &[1.0, 1.0]).unwrap();
        assert_eq!(at0.to_vec3::<f64>().unwrap(), eps.to_vec3::<f64>().unwrap());
        assert_eq!(at1.to_vec3::<f64>().unwrap(), x1.to_vec3::<f64>().unwrap());
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x1 = nn::randn(&[2, 3, 4], DType::F64, &mut rng).unwrap();
        let eps = nn::randn(&[2, 3, 4], DType::F64, &mut rng).unwrap();
        let oracle = Perfect((&x1 - &eps).unwrap());
        let conds = [ConditionBundle::null(0.3), ConditionBundle::null(0.8)];
        assert_eq!(nn::scalar(&flow_match_loss(&oracle, &x1, &eps, &conds, None).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn euler_on_a_constant_field_is_exact() {
        let c = Tensor::new(&[[[0.5f64, -1.25, 2.0]]], &device()).unwrap();
        let model = Constant(c.clone());
        let out = sample(&model, None, 4, 3, 10, 1.0, DType::F64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let eps = nn::randn(&[1, 4, 3], DType::F64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let want = eps.broadcast_add(&c).unwrap();
        let d = nn::scalar(&(out - want).unwrap().abs().unwrap().max_all().unwrap()).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn guidance_formula_and_degeneracy() {
        let style = [0.6, 0.8];
        let run = |s: f64| sample(&NullAware, Some(&style), 2, 2, 4, s, DType::F64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let unguided = run(1.0).flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let eps = nn::randn(&[1, 2, 2], DType::F64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (u, e) in unguided.iter().zip(&eps) {
            assert!((u - (e + 1.0)).abs() < 1e-12);
        }
        // v = -0.5 + 3·(1 + 0.5) = 4
        let guided = run(3.0).flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (g, e) in guided.iter().zip(&eps) {
            assert!((g - (e + 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cfg_scale_one_matches_unguided_on_a_real_model() {
        let cfg = DitConfig { hidden_dim: 16, num_heads: 2, num_layers: 1, latent_channels: 4, style_dim: 2, ..DitConfig::desk() };
        let m = AccompDit::new(cfg, DType::F32, 0).unwrap();
        let style = [0.6, 0.8];
        let a = sample(&m, Some(&style), 5, 4, 6, 1.0, DType::F32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // unguided: integrate the conditional field by hand
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = nn::randn(&[1, 5, 4], DType::F32, &mut rng).unwrap();
        for k in 0..6 {
            let c = ConditionBundle { style: Some(style.to_vec()), t: k as f64 / 6.0, modality: CondModality::Text };
            x = (&x + (m.velocity(&x, &[c], None).unwrap() * (1.0 / 6.0)).unwrap()).unwrap();
        }
        assert_eq!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap(), x.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    }

    #[test]
    fn selection_degenerate_ratios() {
        let text = emb(0.0, Modality::Text);
        let audio = emb(1.0, Modality::Audio);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(select_condition(&text, Some(&audio), 1.0, 0.0, 0.5, &mut rng).modality, CondModality::Audio);
            assert_eq!(select_condition(&text, Some(&audio), 0.0, 0.0, 0.5, &mut rng).modality, CondModality::Text);
        }
        let c = select_condition(&text, Some(&audio), 1.0, 0.0, 0.5, &mut rng);
        assert_eq!(c.style.as_deref(), Some(audio.values()));
    }

    #[test]
    fn selection_ratio_converges() {
        let text = emb(0.0, Modality::Text);
        let audio = emb(1.0, Modality::Audio);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let audio_count = (0..n)
            .filter(|_| select_condition(&text, Some(&audio), 0.5, 0.0, 0.5, &mut rng).modality == CondModality::Audio)
            .count();
        let frac = audio_count as f64 / n as f64;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
    }

    #[test]
    fn padded_batch_loss_is_mean_of_individual_losses() {
        let cfg = DitConfig { hidden_dim: 16, num_heads: 2, num_layers: 2, latent_channels: 4, style_dim: 2, ..DitConfig::desk() };
        let m = AccompDit::new(cfg, DType::F64, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a1 = nn::randn(&[1, 5, 4], DType::F64, &mut rng).unwrap();
        let b1 = nn::randn(&[1, 3, 4], DType::F64, &mut rng).unwrap();
        let ae = nn::randn(&[1, 5, 4], DType::F64, &mut rng).unwrap();
        let be = nn::randn(&[1, 3, 4], DType::F64, &mut rng).unwrap();
        let ca = ConditionBundle { style: Some(vec![1.0, 0.0]), t: 0.3, modality: CondModality::Text };
        let cb = ConditionBundle::null(0.7);
        let la = nn::scalar(&flow_match_loss(&m, &a1, &ae, std::slice::from_ref(&ca), None).unwrap()).unwrap();
        let lb = nn::scalar(&flow_match_loss(&m, &b1, &be, std::slice::from_ref(&cb), None).unwrap()).unwrap();
        let pad = |t: &Tensor| t.pad_with_zeros(1, 0, 2).unwrap();
        let x1 = Tensor::cat(&[a1.clone(), pad(&b1)], 0).unwrap();
        let eps = Tensor::cat(&[ae.clone(), pad(&be)], 0).unwrap();
        let mask = Tensor::new(&[[1f64, 1., 1., 1., 1.], [1., 1., 1., 0., 0.]], &device()).unwrap();
        let lp = nn::scalar(&flow_match_loss(&m, &x1, &eps, &[ca, cb], Some(&mask)).unwrap()).unwrap();
        assert!((lp - (la + lb) / 2.0).abs() < 1e-6, "{lp} vs {}", (la + lb) / 2.0);
    }

    #[test]
    fn flow_loss_gradient_matches_finite_differences() {
        let cfg = DitConfig { hidden_dim: 8, num_heads: 2, num_layers: 1, latent_channels: 4, style_dim: 2, ..DitConfig::desk() };
        let m = AccompDit::new(cfg, DType::F64, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x1 = nn::randn(&[1, 4, 4], DType::F64, &mut rng).unwrap();
        let eps = nn::randn(&[1, 4, 4], DType::F64, &mut rng).unwrap();
        let c = [ConditionBundle { style: Some(vec![0.6, 0.8]), t: 0.4, modality: CondModality::Text }];
        let r = check_gradients(&m.params, || flow_match_loss(&m, &x1, &eps, &c, None), 1e-6, 12, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
