use candle_core::{DType, Tensor, D};

use super::model::{Discriminator, Projector};
use super::TEACHER_FRAME_RATE;
use crate::audio::{chromagram, hann_window, AudioClip, FeatureMatrix, CHROMA_BINS};
use crate::error::{Error, Result};
use crate::nn;

/// Mean over all elements of `½(mu² + e^logvar − 1 − logvar)`.
pub fn kl_loss(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let t = ((mu.sqr()? + logvar.exp()?)? - logvar)?;
    Ok(((t - 1.0)? * 0.5)?.mean_all()?)
}

/// Multi-resolution log-magnitude L1 plus waveform L1, differentiable in
/// both arguments. Frames use a periodic Hann window with hop `size / 4`;
/// sizes longer than the input are skipped.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    kernels: Vec<(usize, Tensor)>,
    floor: f64,
}

impl SpectralLoss {
    pub fn new(scales: &[usize], floor: f64, dtype: DType) -> Result<Self> {
        let mut kernels = Vec::with_capacity(scales.len());
        for &n in scales {
            let bins = n / 2 + 1;
            let w = hann_window(n);
            let mut v = vec![0.0; 2 * bins * n];
            for k in 0..bins {
                for i in 0..n {
                    let phase = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    v[k * n + i] = w[i] * phase.cos();
                    v[(bins + k) * n + i] = -w[i] * phase.sin();
                }
            }
            kernels.push((n, nn::tensor_from_f64(v, &[2 * bins, 1, n], dtype)?));
        }
        Ok(Self { kernels, floor })
    }

    /// `x`, `y`: `(B, 1, T)`.
    pub fn forward(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let t = x.dim(2)?;
        let mut total = (x - y)?.abs()?.mean_all()?;
        let mut used = 0usize;
        let mut spectral: Option<Tensor> = None;
        for (n, kernel) in &self.kernels {
            if *n > t {
                continue;
            }
            let lx = log_magnitude(x, kernel, *n, self.floor)?;
            let ly = log_magnitude(y, kernel, *n, self.floor)?;
            let d = (lx - ly)?.abs()?.mean_all()?;
            spectral = Some(match spectral {
                Some(s) => (s + d)?,
                None => d,
            });
            used += 1;
        }
        if let Some(s) = spectral {
            total = (total + (s / used as f64)?)?;
        }
        Ok(total)
    }
}

fn log_magnitude(x: &Tensor, kernel: &Tensor, n: usize, floor: f64) -> Result<Tensor> {
    let spec = crate::nn::conv1d(x, kernel, n / 4)?;
    let bins = kernel.dim(0)? / 2;
    let re = spec.narrow(1, 0, bins)?;
    let im = spec.narrow(1, bins, bins)?;
    let mag = ((re.sqr()? + im.sqr()?)? + 1e-20)?.sqrt()?;
    Ok((mag + floor)?.log()?)
}

/// Chroma teacher at 25 frames per second. Clips shorter than one analysis
/// frame are zero-padded.
pub fn teacher_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    let hop = (clip.sample_rate() / TEACHER_FRAME_RATE) as usize;
    let frame = (2 * hop).next_power_of_two();
    if clip.len() < frame {
        let mut v = clip.samples().to_vec();
        v.resize(frame, 0.0);
        return chromagram(&AudioClip::new(v, clip.sample_rate())?, frame, hop);
    }
    chromagram(clip, frame, hop)
}

/// Linear interpolation of teacher rows onto `frames` evenly spaced points
/// (end points aligned), each row renormalized. Returns the row-major values
/// and a validity mask; rows whose interpolant vanishes are invalid.
pub fn align_teacher(teacher: &FeatureMatrix, frames: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if teacher.frames == 0 || frames == 0 {
        return Err(Error::FrameAlignment(format!(
            "cannot align {} teacher frames to {frames} latent frames",
            teacher.frames
        )));
    }
    let d = teacher.dims;
    let mut values = vec![0.0; frames * d];
    let mut mask = vec![false; frames];
    for j in 0..frames {
        let pos = if frames == 1 { 0.0 } else { j as f64 * (teacher.frames - 1) as f64 / (frames - 1) as f64 };
        let lo = (pos.floor() as usize).min(teacher.frames - 1);
        let hi = (lo + 1).min(teacher.frames - 1);
        let w = pos - lo as f64;
        let row = &mut values[j * d..(j + 1) * d];
        for (k, r) in row.iter_mut().enumerate() {
            *r = (1.0 - w) * teacher.row(lo)[k] + w * teacher.row(hi)[k];
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-8 {
            row.iter_mut().for_each(|v| *v /= norm);
            mask[j] = true;
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((values, mask))
}

/// Teacher targets for a batch: `(B, frames, 12)` values and a `(B, frames)`
/// 0/1 mask.
pub fn teacher_batch(teachers: &[&FeatureMatrix], frames: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let mut values = Vec::with_capacity(teachers.len() * frames * CHROMA_BINS);
    let mut mask = Vec::with_capacity(teachers.len() * frames);
    for t in teachers {
        let (v, m) = align_teacher(t, frames)?;
        values.extend(v);
        mask.extend(m.into_iter().map(|b| if b { 1.0 } else { 0.0 }));
    }
    if !mask.iter().any(|&m| m > 0.0) {
        return Err(Error::FrameAlignment("every teacher frame is silent".into()));
    }
    Ok((
        nn::tensor_from_f64(values, &[teachers.len(), frames, CHROMA_BINS], dtype)?,
        nn::tensor_from_f64(mask, &[teachers.len(), frames], dtype)?,
    ))
}

/// Masked mean of `1 − cos(pred_t, teacher_t)` over frames. `pred` and
/// `teacher` are `(B, F, 12)`, `mask` is `(B, F)`.
pub fn cosine_alignment_loss(pred: &Tensor, teacher: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let dot = (pred * teacher)?.sum(D::Minus1)?;
    let pn = (pred.sqr()?.sum(D::Minus1)? + 1e-20)?.sqrt()?;
    let tn = (teacher.sqr()?.sum(D::Minus1)? + 1e-20)?.sqrt()?;
    let cos = (dot / (pn * tn)?)?;
    let count = nn::scalar(&mask.sum_all()?)?;
    if count == 0.0 {
        return Err(Error::FrameAlignment("no valid teacher frames".into()));
    }
    Ok(((cos.neg()? + 1.0)? * mask)?.sum_all()?.affine(1.0 / count, 0.0)?)
}

/// Projects `z` `(B, C, F)` and aligns it with the frozen teacher targets.
pub fn semantic_loss(z: &Tensor, projector: &Projector, teacher: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let pred = projector.forward(&z.transpose(1, 2)?)?;
    cosine_alignment_loss(&pred, &teacher.detach(), &mask.detach())
}

/// Hinge discriminator loss from logits.
pub fn hinge_d_loss(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let r = (real.neg()? + 1.0)?.relu()?.mean_all()?;
    let f = (fake + 1.0)?.relu()?.mean_all()?;
    Ok((r + f)?)
}

/// Hinge generator loss from fake logits.
pub fn hinge_g_loss(fake: &Tensor) -> Result<Tensor> {
    Ok(fake.mean_all()?.neg()?)
}

/// `(d_loss, g_loss)`; the discriminator sees a detached fake.
pub fn adversarial_losses(real: &Tensor, fake: &Tensor, disc: &Discriminator) -> Result<(Tensor, Tensor)> {
    if real.dims() != fake.dims() {
        return Err(Error::ShapeMismatch(format!("real {:?} vs fake {:?}", real.dims(), fake.dims())));
    }
    let d = hinge_d_loss(&disc.forward(real)?, &disc.forward(&fake.detach())?)?;
    let g = hinge_g_loss(&disc.forward(fake)?)?;
    Ok((d, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SPECTRAL_EPS;
    use crate::nn::{check_gradients, device, Init, ParamStore};

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(v, &device()).unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        let s = |mu: &[f64], lv: &[f64]| nn::scalar(&kl_loss(&t1(mu), &t1(lv)).unwrap()).unwrap();
        assert_eq!(s(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((s(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        assert!((s(&[0.0], &[4f64.ln()]) - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-12);
        assert!((s(&[0.0], &[4f64.ln()]) - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn hinge_fixed_points() {
        let zero = Tensor::zeros((2, 1, 5), DType::F64, &device()).unwrap();
        assert_eq!(nn::scalar(&hinge_d_loss(&zero, &zero).unwrap()).unwrap(), 2.0);
        assert_eq!(nn::scalar(&hinge_g_loss(&zero).unwrap()).unwrap(), 0.0);
        let real = t1(&[1.0, 3.0, 1.5]);
        let fake = t1(&[-1.0, -2.0, -7.0]);
        assert_eq!(nn::scalar(&hinge_d_loss(&real, &fake).unwrap()).unwrap(), 0.0);
    }

    fn teacher_rows(rows: &[[f64; 12]]) -> (Tensor, Tensor) {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mask: Vec<f64> = rows.iter().map(|r| if r.iter().any(|v| *v != 0.0) { 1.0 } else { 0.0 }).collect();
        (
            nn::tensor_from_f64(flat, &[1, rows.len(), 12], DType::F64).unwrap(),
            nn::tensor_from_f64(mask, &[1, rows.len()], DType::F64).unwrap(),
        )
    }

    #[test]
    fn cosine_loss_endpoints() {
        let mut a = [0.0; 12];
        a[0] = 0.6;
        a[4] = 0.8;
        let mut b = [0.0; 12];
        b[7] = 1.0;
        let (t, m) = teacher_rows(&[a, b]);
        assert!(nn::scalar(&cosine_alignment_loss(&t, &t, &m).unwrap()).unwrap().abs() < 1e-12);
        let l = nn::scalar(&cosine_alignment_loss(&t.neg().unwrap(), &t, &m).unwrap()).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        // silent teacher rows are skipped
        let (t2, m2) = teacher_rows(&[a, [0.0; 12]]);
        let pred = teacher_rows(&[a, b]).0;
        assert!(nn::scalar(&cosine_alignment_loss(&pred, &t2, &m2).unwrap()).unwrap().abs() < 1e-12);
        let (_, none) = teacher_rows(&[[0.0; 12]]);
        assert!(matches!(cosine_alignment_loss(&pred.narrow(1, 0, 1).unwrap(), &t2.narrow(1, 1, 1).unwrap(), &none), Err(Error::FrameAlignment(_))));
    }

    #[test]
    fn alignment_interpolates_end_to_end() {
        let mut v = vec![0.0; 24];
        v[0] = 1.0;
        v[12 + 1] = 1.0;
        let fm = FeatureMatrix::new(2, 12, v, 25.0).unwrap();
        let (vals, mask) = align_teacher(&fm, 3).unwrap();
        assert!(mask.iter().all(|&m| m));
        assert_eq!(vals[0], 1.0);
        assert_eq!(vals[24 + 1], 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vals[12] - h).abs() < 1e-12 && (vals[13] - h).abs() < 1e-12);
        let empty = FeatureMatrix::new(0, 12, vec![], 25.0).unwrap();
        assert!(matches!(align_teacher(&empty, 3), Err(Error::FrameAlignment(_))));
    }

    #[test]
    fn teacher_is_closed_form_and_stable() {
        let clip = AudioClip::from_fn(4000, 8000, |t| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()).unwrap();
        let a = teacher_features(&clip).unwrap();
        let b = teacher_features(&clip).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frame_rate, 25.0);
    }

    #[test]
    fn spectral_loss_zero_on_identity_and_positive_otherwise() {
        let sl = SpectralLoss::new(&[64, 128], SPECTRAL_EPS, DType::F64).unwrap();
        let x = nn::randn(&[2, 1, 256], DType::F64, &mut rand::SeedableRng::seed_from_u64(1)).unwrap();
        assert_eq!(nn::scalar(&sl.forward(&x, &x).unwrap()).unwrap(), 0.0);
        let y = (&x * 0.5).unwrap();
        assert!(nn::scalar(&sl.forward(&x, &y).unwrap()).unwrap() > 0.1);
    }

    #[test]
    fn spectral_loss_matches_stft_oracle() {
        use crate::audio::stft;
        let a = AudioClip::from_fn(256, 8000, |t| (t * 3000.0).sin() * 0.5).unwrap();
        let b = AudioClip::from_fn(256, 8000, |t| (t * 1234.0).cos() * 0.3).unwrap();
        let as_t = |c: &AudioClip| nn::tensor_from_f64(c.samples().iter().map(|&s| s as f64).collect(), &[1, 1, 256], DType::F64).unwrap();
        let got = nn::scalar(&SpectralLoss::new(&[64], SPECTRAL_EPS, DType::F64).unwrap().forward(&as_t(&a), &as_t(&b)).unwrap()).unwrap();
        let sa = stft(&a, 64, 16).unwrap();
        let sb = stft(&b, 64, 16).unwrap();
        let mut spec = 0.0;
        for (x, y) in sa.data.iter().zip(&sb.data) {
            spec += ((x.norm() + SPECTRAL_EPS).ln() - (y.norm() + SPECTRAL_EPS).ln()).abs();
        }
        spec /= sa.data.len() as f64;
        let wave: f64 = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / 256.0;
        assert!((got - (spec + wave)).abs() < 1e-9, "{got} vs {}", spec + wave);
    }

    #[test]
    fn gradients_of_each_loss_match_finite_differences() {
        let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(11);
        // kl
        let mut p = ParamStore::new(DType::F64, 3);
        let mu = p.init("mu", &[2, 3, 4], Init::Normal(1.0)).unwrap();
        let lv = p.init("lv", &[2, 3, 4], Init::Normal(0.5)).unwrap();
        let r = check_gradients(&p, || kl_loss(&mu, &lv), 1e-5, 24, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-4, "kl {r:?}");
        // semantic, 3-frame toy
        let mut p = ParamStore::new(DType::F64, 4);
        let proj = Projector::new(&mut p, "proj", 4, 6).unwrap();
        let z = nn::randn(&[1, 4, 3], DType::F64, &mut rng).unwrap();
        let mut a = [0.1; 12];
        a[2] = 1.0;
        let mut b = [0.0; 12];
        b[9] = 1.0;
        let (t, m) = teacher_rows(&[a, b, a]);
        let r = check_gradients(&p, || semantic_loss(&z, &proj, &t, &m), 1e-6, 40, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-4, "sem {r:?}");
        // adversarial generator loss w.r.t. a 64-sample fake waveform
        let mut dp = ParamStore::new(DType::F64, 5);
        let disc = Discriminator::new(&mut dp, "disc", 3).unwrap();
        let mut fp = ParamStore::new(DType::F64, 6);
        let fake = fp.init("fake", &[2, 1, 64], Init::Normal(0.3)).unwrap();
        let real = nn::randn(&[2, 1, 64], DType::F64, &mut rng).unwrap();
        let r = check_gradients(&fp, || Ok(adversarial_losses(&real, &fake, &disc)?.1), 1e-6, 64, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-4, "adv {r:?}");
        // reconstruction w.r.t. the reconstruction
        let sl = SpectralLoss::new(&[32, 64], SPECTRAL_EPS, DType::F64).unwrap();
        let mut rp = ParamStore::new(DType::F64, 7);
        let y = rp.init("y", &[1, 1, 128], Init::Normal(0.3)).unwrap();
        let x = nn::randn(&[1, 1, 128], DType::F64, &mut rng).unwrap();
        let r = check_gradients(&rp, || sl.forward(&x, &y), 1e-7, 64, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-4, "recon {r:?}");
    }
}
