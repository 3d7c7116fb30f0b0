//! Output Gaussian from the default-view latent and the combined view embedding.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Var};
use crate::error::{shape_err, Result};
use crate::nn::{GaussianVar, Mlp, ParamStore, Session};

/// Lower bound on the predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Scalar forecast distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastGaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub mean_net: Mlp,
    pub log_std_net: Mlp,
    pub latent_dim: usize,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = [2 * latent_dim, hidden, hidden, 1];
        Self {
            mean_net: Mlp::new(store, &format!("{name}.d1"), &dims, rng),
            log_std_net: Mlp::new(store, &format!("{name}.d2"), &dims, rng),
            latent_dim,
        }
    }

    /// `B × 1` mean and log-std from `z ⊕ ũ`.
    pub fn forward(&self, s: &Session, z_default: Var, combined: Var) -> GaussianVar {
        let e = s.concat_cols(&[z_default, combined]);
        GaussianVar {
            mean: self.mean_net.forward(s, e),
            log_std: s.clamp(self.log_std_net.forward(s, e), SIGMA_FLOOR.ln(), f64::INFINITY),
        }
    }
}

pub fn decode(z_default: &[f64], combined: &[f64], decoder: &Decoder, store: &ParamStore) -> Result<ForecastGaussian> {
    let d = decoder.latent_dim;
    if z_default.len() != d || combined.len() != d {
        return Err(shape_err("decoder input", d, z_default.len().max(combined.len())));
    }
    let s = Session::new(store);
    let row = |v: &[f64]| s.leaf(Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row"));
    let g = decoder.forward(&s, row(z_default), row(combined));
    Ok(ForecastGaussian { mean: s.value(g.mean)[[0, 0]], std: s.value(g.log_std)[[0, 0]].exp() })
}

pub fn forecast_sample(out: ForecastGaussian, noise: f64) -> f64 {
    out.mean + out.std * noise
}

pub fn log_density(out: ForecastGaussian, y: f64) -> f64 {
    let z = (y - out.mean) / out.std;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - out.std.ln() - 0.5 * z * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn decoder(seed: u64) -> (ParamStore, Decoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Decoder::new(&mut store, "dec", 2, 5, &mut rng);
        (store, d)
    }

    #[test]
    fn zero_weights_expose_biases() {
        let (mut store, d) = decoder(0);
        for net in [&d.mean_net, &d.log_std_net] {
            for layer in &net.layers {
                store.get_mut(layer.weight).fill(0.0);
                store.get_mut(layer.bias).fill(0.0);
            }
        }
        store.get_mut(d.mean_net.layers[2].bias).fill(0.7);
        store.get_mut(d.log_std_net.layers[2].bias).fill(-0.3);
        let out = decode(&[1.0, 2.0], &[3.0, 4.0], &d, &store).unwrap();
        assert_abs_diff_eq!(out.mean, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(out.std, (-0.3f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn concatenation_puts_default_first() {
        let (mut store, d) = decoder(0);
        // Route only the first input coordinate through the mean network.
        for layer in &d.mean_net.layers {
            store.get_mut(layer.weight).fill(0.0);
            store.get_mut(layer.bias).fill(0.0);
        }
        store.get_mut(d.mean_net.layers[0].weight)[[0, 0]] = 1.0;
        store.get_mut(d.mean_net.layers[1].weight)[[0, 0]] = 1.0;
        store.get_mut(d.mean_net.layers[2].weight)[[0, 0]] = 1.0;
        let out = decode(&[5.0, 0.0], &[9.0, 0.0], &d, &store).unwrap();
        assert_eq!(out.mean, 5.0);
    }

    #[test]
    fn std_floor_and_density() {
        let (mut store, d) = decoder(1);
        store.get_mut(d.log_std_net.layers[2].bias).fill(-100.0);
        for layer in &d.log_std_net.layers {
            store.get_mut(layer.weight).fill(0.0);
        }
        let out = decode(&[0.1, 0.2], &[0.3, 0.4], &d, &store).unwrap();
        assert_abs_diff_eq!(out.std, SIGMA_FLOOR, epsilon = 1e-18);

        let g = ForecastGaussian { mean: 1.0, std: 1.0 };
        assert_abs_diff_eq!(log_density(g, 1.0), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert_abs_diff_eq!(log_density(g, 2.0), log_density(g, 1.0) - 0.5, epsilon = 1e-12);
        assert_eq!(forecast_sample(g, 0.0), 1.0);
    }
}
