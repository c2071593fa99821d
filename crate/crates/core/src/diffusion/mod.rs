//! Forward noising, one-step `x_0` prediction and DDIM stepping.
//!
//! Everything is space-agnostic: the same code runs on pixel-space images
//! for the toy backend and on whatever space the recorded exports use.

mod backend;
pub mod noise;
mod schedule;

pub use backend::{ConditionSpec, DenoiserBackend, ToyDenoiser};
pub use noise::GaussianNoise;
pub use schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS};

use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Noising timestep used for reconstruction unless configured otherwise.
pub const DEFAULT_TIMESTEP: usize = 400;

fn zip_map(
    a: &ImageTensor,
    b: &ImageTensor,
    what: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<ImageTensor> {
    a.same_shape(b, what)?;
    let (h, w, c) = a.shape();
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    ImageTensor::new(h, w, c, data)
}

/// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn add_noise(
    x0: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    let ab = schedule.alpha_bar(t)?;
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    zip_map(x0, eps, "add_noise", |x, e| signal * x + noise * e)
}

/// `x~_0 = (x_t - sqrt(1 - alpha_bar_t) eps^) / sqrt(alpha_bar_t)`.
pub fn predict_x0(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    let ab = schedule.alpha_bar(t)?;
    if ab <= 0.0 {
        return Err(Error::invalid(format!("alpha_bar[{t}] is zero")));
    }
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    zip_map(x_t, eps_hat, "predict_x0", |x, e| (x - noise * e) / signal)
}

/// One deterministic (`sigma = 0`) or stochastic DDIM update from `t` to `t_prev`:
/// `sqrt(alpha_bar_prev) x~_0 + sqrt(1 - alpha_bar_prev - sigma^2) eps^ + sigma z`.
pub fn ddim_step(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    sigma: f64,
    noise: Option<&mut GaussianNoise>,
) -> Result<ImageTensor> {
    if t_prev >= t {
        return Err(Error::invalid(format!("t_prev {t_prev} must precede t {t}")));
    }
    let ab_prev = schedule.alpha_bar(t_prev)?;
    let dir_var = 1.0 - ab_prev - sigma * sigma;
    if sigma.is_nan() || sigma < 0.0 || dir_var < 0.0 {
        return Err(Error::invalid(format!(
            "sigma {sigma} leaves 1 - alpha_bar_prev - sigma^2 = {dir_var} negative"
        )));
    }
    let x0 = predict_x0(x_t, eps_hat, t, schedule)?;
    let (a, b) = (ab_prev.sqrt(), dir_var.sqrt());
    let mut out = zip_map(&x0, eps_hat, "ddim_step", |x, e| a * x + b * e)?;
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::invalid("sigma > 0 needs a noise source"))?;
        let (h, w, c) = out.shape();
        let z = noise.image(h, w, c)?;
        out = zip_map(&out, &z, "ddim_step", |x, z| x + sigma * z)?;
    }
    Ok(out)
}

/// Noise `x0` to `t_s`, ask the backend for `eps` once, and map straight back
/// to the predicted clean sample.
pub fn one_step_reconstruct(
    x0: &ImageTensor,
    t_s: usize,
    cond: &ConditionSpec,
    backend: &dyn DenoiserBackend,
    schedule: &NoiseSchedule,
    seed: u64,
    stream: u64,
) -> Result<ImageTensor> {
    if t_s == 0 || t_s > schedule.num_steps() {
        return Err(Error::invalid(format!(
            "timestep {t_s} outside 1..={}",
            schedule.num_steps()
        )));
    }
    let (h, w, c) = x0.shape();
    let eps = GaussianNoise::new(seed, stream).image(h, w, c)?;
    let x_t = add_noise(x0, t_s, &eps, schedule)?;
    let eps_hat = backend.predict_eps(&x_t, t_s, cond)?;
    if eps_hat.shape() != x_t.shape() {
        return Err(Error::shape(format!(
            "backend returned {:?} for input {:?}",
            eps_hat.shape(),
            x_t.shape()
        )));
    }
    predict_x0(&x_t, &eps_hat, t_s, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: f64) -> ImageTensor {
        ImageTensor::new(1, 1, 1, vec![v]).unwrap()
    }

    fn toy_schedule() -> NoiseSchedule {
        NoiseSchedule::from_alpha_bar(vec![1.0, 0.81, 0.25]).unwrap()
    }

    #[test]
    fn add_noise_identity_at_unit_alpha() {
        let s = toy_schedule();
        let x0 = px(0.3);
        assert_eq!(add_noise(&x0, 0, &px(0.9), &s).unwrap(), x0);
    }

    #[test]
    fn add_noise_hand_value() {
        // 0.5 * 0.8 + sqrt(0.75) * 0.4
        let x = add_noise(&px(0.8), 2, &px(0.4), &toy_schedule()).unwrap();
        assert!((x.data()[0] - 0.746_410_161_513_775_5).abs() < 1e-12);
    }

    #[test]
    fn add_noise_zero_eps_scales() {
        let x = add_noise(&px(0.8), 2, &px(0.0), &toy_schedule()).unwrap();
        assert_eq!(x.data()[0], 0.4);
    }

    #[test]
    fn add_noise_errors() {
        let s = toy_schedule();
        assert!(add_noise(&px(0.1), 3, &px(0.0), &s).is_err());
        let two = ImageTensor::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        assert!(add_noise(&px(0.1), 1, &two, &s).is_err());
    }

    #[test]
    fn predict_x0_hand_value() {
        let x = predict_x0(&px(0.3), &px(0.0), 2, &toy_schedule()).unwrap();
        assert!((x.data()[0] - 0.6).abs() < 1e-15);
        assert_eq!(predict_x0(&px(0.3), &px(0.7), 0, &toy_schedule()).unwrap(), px(0.3));
    }

    #[test]
    fn ddim_hand_value() {
        // x~0 = (0.5 - sqrt(0.75) * 0.2) / 0.5 = 0.6535898384862245
        // x_prev = 0.9 * x~0 + sqrt(0.19) * 0.2
        let out = ddim_step(&px(0.5), &px(0.2), 2, 1, &toy_schedule(), 0.0, None).unwrap();
        assert!((out.data()[0] - 0.675_408_833_508_415_5).abs() < 1e-12);
    }

    #[test]
    fn ddim_to_zero_returns_x0_exactly() {
        let s = NoiseSchedule::default();
        let x_t = ImageTensor::new(1, 3, 1, vec![0.1, -1.2, 2.5]).unwrap();
        let e = ImageTensor::new(1, 3, 1, vec![0.7, 0.3, -0.4]).unwrap();
        let x0 = predict_x0(&x_t, &e, 400, &s).unwrap();
        assert_eq!(ddim_step(&x_t, &e, 400, 0, &s, 0.0, None).unwrap(), x0);
    }

    #[test]
    fn ddim_errors() {
        let s = toy_schedule();
        let two = ImageTensor::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        assert!(ddim_step(&px(0.5), &two, 2, 1, &s, 0.0, None).is_err());
        assert!(ddim_step(&px(0.5), &px(0.1), 1, 1, &s, 0.0, None).is_err());
        // 1 - 0.81 - 0.5^2 < 0
        assert!(ddim_step(&px(0.5), &px(0.1), 2, 1, &s, 0.5, None).is_err());
        assert!(ddim_step(&px(0.5), &px(0.1), 2, 1, &s, 0.1, None).is_err());
        let mut g = GaussianNoise::new(0, 0);
        assert!(ddim_step(&px(0.5), &px(0.1), 2, 1, &s, 0.1, Some(&mut g)).is_ok());
    }
}
