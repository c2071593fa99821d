use crate::error::{Error, Result};
use crate::injection::{InjectionSet, InjectionWeight};
use crate::resample::resample_binary;
use crate::types::{ImageTensor, TokenIndexSet};

use super::NoiseSchedule;

/// Everything a denoiser is conditioned on for one (sample, class) pair.
#[derive(Debug, Clone)]
pub struct ConditionSpec {
    pub sample_id: String,
    pub class_name: String,
    pub prompt: String,
    pub tokens: TokenIndexSet,
    pub injection: Option<InjectionSet>,
    pub weight: InjectionWeight,
}

/// A noise predictor `eps(x_t, t, y)`.
///
/// Implementations must return a finite tensor of the input's shape and be
/// deterministic in their inputs. The engine only ever calls them through
/// `&self`, possibly from several worker threads.
pub trait DenoiserBackend: Send + Sync {
    fn predict_eps(&self, x_t: &ImageTensor, t: usize, cond: &ConditionSpec) -> Result<ImageTensor>;
}

/// A closed-form stand-in for a pretrained model.
///
/// The model's "belief" about the clean image is
/// `mu = m * fg + (1 - m) * bg`, with `m` the finest injected mask resampled
/// to image resolution, so the generated object region follows whatever mask
/// was injected. The predicted noise is exactly the noise that maps `x_t`
/// back onto `mu`.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    fg_texture: ImageTensor,
    bg_texture: ImageTensor,
    schedule: NoiseSchedule,
}

impl ToyDenoiser {
    pub fn new(fg_texture: ImageTensor, bg_texture: ImageTensor, schedule: NoiseSchedule) -> Result<Self> {
        fg_texture.same_shape(&bg_texture, "toy textures")?;
        Ok(Self {
            fg_texture,
            bg_texture,
            schedule,
        })
    }

    /// The image this backend reconstructs under `cond`.
    pub fn target(&self, cond: &ConditionSpec) -> Result<ImageTensor> {
        let (h, w, c) = self.fg_texture.shape();
        let mask = match cond.injection.as_ref().and_then(InjectionSet::finest) {
            Some(layer) => Some(resample_binary(&layer.mask, h, w)?),
            None => None,
        };
        let fg = self.fg_texture.data();
        let bg = self.bg_texture.data();
        let data = (0..h * w * c)
            .map(|i| {
                let on = mask.as_ref().is_some_and(|m| m.bits()[i / c] == 1);
                if on {
                    fg[i]
                } else {
                    bg[i]
                }
            })
            .collect();
        ImageTensor::new(h, w, c, data)
    }
}

impl DenoiserBackend for ToyDenoiser {
    fn predict_eps(&self, x_t: &ImageTensor, t: usize, cond: &ConditionSpec) -> Result<ImageTensor> {
        if x_t.shape() != self.fg_texture.shape() {
            return Err(Error::shape(format!(
                "toy denoiser built for {:?}, got {:?}",
                self.fg_texture.shape(),
                x_t.shape()
            )));
        }
        let ab = self.schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Err(Error::invalid("toy denoiser needs t > 0"));
        }
        let mu = self.target(cond)?;
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (h, w, c) = x_t.shape();
        let data = x_t
            .data()
            .iter()
            .zip(mu.data())
            .map(|(&x, &m)| (x - signal * m) / noise)
            .collect();
        ImageTensor::new(h, w, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{one_step_reconstruct, predict_x0};
    use crate::injection::prepare_injection_set;
    use crate::types::SoftMask;
    use proptest::prelude::*;

    fn textures() -> (ImageTensor, ImageTensor) {
        let fg = ImageTensor::from_fn(8, 8, 3, |y, x, c| ((y + 2 * x + c) % 7) as f64 / 7.0).unwrap();
        let bg = ImageTensor::from_fn(8, 8, 3, |_, _, c| 0.1 * c as f64).unwrap();
        (fg, bg)
    }

    fn cond(mask: Option<&SoftMask>) -> ConditionSpec {
        let tokens = TokenIndexSet::new([4]);
        ConditionSpec {
            sample_id: "s".into(),
            class_name: "cat".into(),
            prompt: "A photo of cat".into(),
            injection: mask.map(|m| prepare_injection_set(m, 0.5, &tokens, 77, &[(4, 4)]).unwrap()),
            tokens,
            weight: InjectionWeight::default(),
        }
    }

    #[test]
    fn target_follows_injected_mask() {
        let (fg, bg) = textures();
        let toy = ToyDenoiser::new(fg.clone(), bg.clone(), NoiseSchedule::default()).unwrap();
        let mask = SoftMask::from_fn(8, 8, |y, _| if y < 4 { 1.0 } else { 0.0 }).unwrap();
        let mu = toy.target(&cond(Some(&mask))).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = if y < 4 { fg.pixel(y, x) } else { bg.pixel(y, x) };
                assert_eq!(mu.pixel(y, x), want);
            }
        }
        assert_eq!(toy.target(&cond(None)).unwrap(), bg);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (fg, bg) = textures();
        let toy = ToyDenoiser::new(fg, bg, NoiseSchedule::default()).unwrap();
        let x = ImageTensor::filled(4, 4, 3, 0.0).unwrap();
        assert!(toy.predict_eps(&x, 10, &cond(None)).is_err());
    }

    proptest! {
        #[test]
        fn one_step_recovers_target(t in 1usize..1000, seed in any::<u64>()) {
            let (fg, bg) = textures();
            let s = NoiseSchedule::default();
            let toy = ToyDenoiser::new(fg, bg, s.clone()).unwrap();
            let mask = SoftMask::from_fn(8, 8, |y, x| if (y + x) % 3 == 0 { 0.9 } else { 0.1 }).unwrap();
            let c = cond(Some(&mask));
            let mu = toy.target(&c).unwrap();
            let x0 = ImageTensor::filled(8, 8, 3, 0.5).unwrap();
            let out = one_step_reconstruct(&x0, t, &c, &toy, &s, seed, 0).unwrap();
            let err = out.data().iter().zip(mu.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-5, "t={} err={}", t, err);
            // The eps route alone gives the same answer.
            let x_t = crate::diffusion::add_noise(&x0, t, &x0, &s).unwrap();
            let eps = toy.predict_eps(&x_t, t, &c).unwrap();
            let back = predict_x0(&x_t, &eps, t, &s).unwrap();
            let err = back.data().iter().zip(mu.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-5);
        }
    }
}
