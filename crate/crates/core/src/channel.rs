//! Small-scale fading, UE hardware offsets, true UL/DL channels and MMSE
//! channel estimation.
//!
//! AP arrays are taken as perfectly calibrated, so the only source of
//! non-reciprocity is the pair of diagonal UE offset matrices:
//! `G_ul = G * Phi_tx` and `G_dl = Phi_rx * G^H`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SystemConfig;
use crate::topology::NetworkRealization;
use crate::C64;

/// Draws one circularly-symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Small-scale fading `H_{k,l}` for every UE/AP pair, stored at `k * L + l`.
pub fn draw_small_scale<R: Rng + ?Sized>(
    rng: &mut R,
    num_ues: usize,
    num_aps: usize,
    ap_antennas: usize,
    ue_antennas: usize,
) -> Vec<DMatrix<C64>> {
    (0..num_ues * num_aps)
        .map(|_| complex_normal_matrix(rng, ap_antennas, ue_antennas))
        .collect()
}

/// Diagonal UE RF-chain offsets, one unit-modulus coefficient per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct UeOffsets {
    pub tx: Vec<C64>,
    pub rx: Vec<C64>,
}

impl UeOffsets {
    pub fn identity(ue_antennas: usize) -> Self {
        UeOffsets {
            tx: vec![C64::new(1.0, 0.0); ue_antennas],
            rx: vec![C64::new(1.0, 0.0); ue_antennas],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, ue_antennas: usize) -> Self {
        let mut phase = || C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let tx = (0..ue_antennas).map(|_| phase()).collect();
        let rx = (0..ue_antennas).map(|_| phase()).collect();
        UeOffsets { tx, rx }
    }

    pub fn tx_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.tx.clone()))
    }

    pub fn rx_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.rx.clone()))
    }

    /// Diagonal of `Phi_rx * Phi_tx^{-H}`, the per-antenna rotation seen by a
    /// coherent receiver when precoding relies on UL estimates.
    pub fn mixing_diagonal(&self) -> Vec<C64> {
        self.rx.iter().zip(&self.tx).map(|(r, t)| r / t.conj()).collect()
    }
}

pub fn draw_ue_offsets<R: Rng + ?Sized>(rng: &mut R, num_ues: usize, ue_antennas: usize) -> Vec<UeOffsets> {
    (0..num_ues).map(|_| UeOffsets::random(rng, ue_antennas)).collect()
}

/// True UL and DL channels with `sqrt(beta)` folded in.
pub fn true_channels(
    beta: &DMatrix<f64>,
    small_scale: &[DMatrix<C64>],
    offsets: &[UeOffsets],
) -> (Vec<DMatrix<C64>>, Vec<DMatrix<C64>>) {
    let (num_ues, num_aps) = beta.shape();
    let mut ul = Vec::with_capacity(num_ues * num_aps);
    let mut dl = Vec::with_capacity(num_ues * num_aps);
    for k in 0..num_ues {
        for l in 0..num_aps {
            let g = &small_scale[k * num_aps + l] * C64::new(beta[(k, l)].sqrt(), 0.0);
            let mut g_ul = g.clone();
            for (m, phi) in offsets[k].tx.iter().enumerate() {
                for v in g_ul.column_mut(m).iter_mut() {
                    *v *= phi;
                }
            }
            let mut g_dl = g.adjoint();
            for (m, phi) in offsets[k].rx.iter().enumerate() {
                for v in g_dl.row_mut(m).iter_mut() {
                    *v *= phi;
                }
            }
            ul.push(g_ul);
            dl.push(g_dl);
        }
    }
    (ul, dl)
}

/// MMSE estimates of the effective UL channels and per-element error variances.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub g_ul_hat: Vec<DMatrix<C64>>,
    /// Error variance `c_{k,l}`, K x L.
    pub err_var: DMatrix<f64>,
}

/// Statistical pilot model: UEs of one pilot group share one observation
/// per AP, `y = sqrt(tau_p p_p) * sum_group g + n`, and each UE scales it
/// by its own MMSE coefficient.
pub fn mmse_estimate<R: Rng + ?Sized>(
    rng: &mut R,
    g_ul_true: &[DMatrix<C64>],
    beta: &DMatrix<f64>,
    pilot_group: &[usize],
    cfg: &SystemConfig,
    noise_power: f64,
) -> ChannelEstimate {
    let (num_ues, num_aps) = beta.shape();
    let groups = pilot_group.iter().copied().max().map_or(0, |g| g + 1);
    let pilot_energy = cfg.tau_p as f64 * cfg.eta_w();
    let amp = pilot_energy.sqrt();
    let noise_std = noise_power.sqrt();
    let (rows, cols) = g_ul_true.first().map_or((0, 0), |g| g.shape());

    let mut observations: Vec<Option<DMatrix<C64>>> = vec![None; groups * num_aps];
    for g in 0..groups {
        let members: Vec<usize> = (0..num_ues).filter(|&k| pilot_group[k] == g).collect();
        if members.is_empty() {
            continue;
        }
        for l in 0..num_aps {
            let mut y = complex_normal_matrix(rng, rows, cols) * C64::new(noise_std, 0.0);
            for &i in &members {
                y += &g_ul_true[i * num_aps + l] * C64::new(amp, 0.0);
            }
            observations[g * num_aps + l] = Some(y);
        }
    }

    let mut g_ul_hat = Vec::with_capacity(num_ues * num_aps);
    let mut err_var = DMatrix::zeros(num_ues, num_aps);
    for k in 0..num_ues {
        let g = pilot_group[k];
        for l in 0..num_aps {
            let group_gain: f64 = (0..num_ues).filter(|&i| pilot_group[i] == g).map(|i| beta[(i, l)]).sum();
            let denom = pilot_energy * group_gain + noise_power;
            let b = beta[(k, l)];
            let scale = amp * b / denom;
            let y = observations[g * num_aps + l].as_ref().expect("group has members");
            g_ul_hat.push(y * C64::new(scale, 0.0));
            err_var[(k, l)] = b - pilot_energy * b * b / denom;
        }
    }
    ChannelEstimate { g_ul_hat, err_var }
}

/// All channel quantities of one coherence block.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub num_aps: usize,
    pub g_ul_true: Vec<DMatrix<C64>>,
    pub g_dl_true: Vec<DMatrix<C64>>,
    pub g_ul_hat: Vec<DMatrix<C64>>,
    pub err_var: DMatrix<f64>,
}

impl ChannelRealization {
    pub fn generate<R: Rng + ?Sized>(
        rng: &mut R,
        net: &NetworkRealization,
        offsets: &[UeOffsets],
        cfg: &SystemConfig,
        noise_power: f64,
    ) -> Self {
        let small = draw_small_scale(rng, net.num_ues(), net.num_aps(), cfg.ap_antennas, cfg.ue_antennas);
        let (g_ul_true, g_dl_true) = true_channels(&net.beta, &small, offsets);
        let (g_ul_hat, err_var) = if cfg.perfect_csi {
            (g_ul_true.clone(), DMatrix::zeros(net.num_ues(), net.num_aps()))
        } else {
            let est = mmse_estimate(rng, &g_ul_true, &net.beta, &net.pilot_group, cfg, noise_power);
            (est.g_ul_hat, est.err_var)
        };
        ChannelRealization {
            num_aps: net.num_aps(),
            g_ul_true,
            g_dl_true,
            g_ul_hat,
            err_var,
        }
    }

    pub fn ul(&self, k: usize, l: usize) -> &DMatrix<C64> {
        &self.g_ul_true[k * self.num_aps + l]
    }

    pub fn dl(&self, k: usize, l: usize) -> &DMatrix<C64> {
        &self.g_dl_true[k * self.num_aps + l]
    }

    pub fn ul_hat(&self, k: usize, l: usize) -> &DMatrix<C64> {
        &self.g_ul_hat[k * self.num_aps + l]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn small_scale_moments() {
        let mut rng = substream(11, &[]);
        let n = 100_000;
        let samples: Vec<C64> = (0..n).map(|_| complex_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<C64>() / n as f64;
        let var = samples.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
        let re_var = samples.iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
        assert!((re_var - 0.5).abs() < 0.01, "{re_var}");
    }

    #[test]
    fn small_scale_reproducible() {
        let a = draw_small_scale(&mut substream(3, &[1]), 2, 3, 4, 2);
        let b = draw_small_scale(&mut substream(3, &[1]), 2, 3, 4, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a[0].shape(), (4, 2));
    }

    #[test]
    fn offsets_unit_modulus_and_uniform_phase() {
        let mut rng = substream(5, &[]);
        let offs = draw_ue_offsets(&mut rng, 25_000, 2);
        let mut bins = [0usize; 16];
        let mut n = 0usize;
        for o in &offs {
            for z in o.tx.iter().chain(&o.rx) {
                assert!((z.norm() - 1.0).abs() < 1e-15);
                let phase = z.arg().rem_euclid(std::f64::consts::TAU);
                bins[((phase / std::f64::consts::TAU * 16.0) as usize).min(15)] += 1;
                n += 1;
            }
        }
        assert_eq!(n, 100_000);
        let expected = n as f64 / 16.0;
        let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        // chi-square 1% critical value, 15 degrees of freedom
        assert!(chi2 < 30.578, "chi2 = {chi2}");
        let id = UeOffsets::identity(3);
        assert!(id.tx.iter().chain(&id.rx).all(|z| *z == C64::new(1.0, 0.0)));
    }

    fn sample_setup(seed: u64) -> (DMatrix<f64>, Vec<DMatrix<C64>>) {
        let mut rng = substream(seed, &[]);
        let beta = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(1e-10..1e-8));
        let h = draw_small_scale(&mut rng, 3, 2, 4, 2);
        (beta, h)
    }

    #[test]
    fn identity_offsets_restore_reciprocity() {
        let (beta, h) = sample_setup(1);
        let (ul, dl) = true_channels(&beta, &h, &vec![UeOffsets::identity(2); 3]);
        for (u, d) in ul.iter().zip(&dl) {
            assert!((u - d.adjoint()).norm() < 1e-15 * u.norm().max(1e-30));
        }
    }

    #[test]
    fn random_offsets_break_reciprocity_columnwise() {
        let (beta, h) = sample_setup(2);
        let mut rng = substream(9, &[]);
        let offs = draw_ue_offsets(&mut rng, 3, 2);
        let (ul, dl) = true_channels(&beta, &h, &offs);
        for k in 0..3 {
            for l in 0..2 {
                let u = &ul[k * 2 + l];
                let d = &dl[k * 2 + l];
                assert!((u - d.adjoint()).norm() > 1e-3 * u.norm());
                let g = &h[k * 2 + l] * C64::new(beta[(k, l)].sqrt(), 0.0);
                for m in 0..2 {
                    let expect = g.column(m) * offs[k].tx[m];
                    assert!((u.column(m) - expect).norm() < 1e-18);
                }
                // G_dl = Phi_rx (Phi_tx^{-1} G_ul)^H
                let unrotated = u * offs[k].tx_matrix().try_inverse().unwrap();
                let rebuilt = offs[k].rx_matrix() * unrotated.adjoint();
                assert!((rebuilt - d).norm() < 1e-12 * d.norm());
            }
        }
    }

    fn estimation_cfg(tau_p: usize) -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.tau_p = tau_p;
        cfg.tau_d = cfg.tau_c - tau_p;
        cfg
    }

    #[test]
    fn noiseless_unshared_estimate_is_exact() {
        let (beta, h) = sample_setup(4);
        let (ul, _) = true_channels(&beta, &h, &vec![UeOffsets::identity(2); 3]);
        let cfg = estimation_cfg(16);
        let est = mmse_estimate(&mut substream(1, &[]), &ul, &beta, &[0, 1, 2], &cfg, 0.0);
        for (a, b) in est.g_ul_hat.iter().zip(&ul) {
            assert!((a - b).norm() < 1e-12 * b.norm());
        }
        assert!(est.err_var.iter().all(|c| c.abs() < 1e-12 * 1e-8));
    }

    #[test]
    fn unshared_error_variance_formula() {
        let (beta, h) = sample_setup(5);
        let (ul, _) = true_channels(&beta, &h, &vec![UeOffsets::identity(2); 3]);
        let cfg = estimation_cfg(16);
        let sigma2 = 1e-10;
        let est = mmse_estimate(&mut substream(1, &[]), &ul, &beta, &[0, 1, 2], &cfg, sigma2);
        let energy = 16.0 * cfg.eta_w();
        for k in 0..3 {
            for l in 0..2 {
                let b = beta[(k, l)];
                let expect = b * sigma2 / (energy * b + sigma2);
                assert!((est.err_var[(k, l)] - expect).abs() < 1e-12 * b);
            }
        }
    }

    #[test]
    fn shared_pilots_give_proportional_estimates() {
        let (beta, h) = sample_setup(6);
        let (ul, _) = true_channels(&beta, &h, &draw_ue_offsets(&mut substream(2, &[]), 3, 2));
        let cfg = estimation_cfg(16);
        let est = mmse_estimate(&mut substream(3, &[]), &ul, &beta, &[0, 0, 1], &cfg, 1e-11);
        for l in 0..2 {
            let ratio = beta[(1, l)] / beta[(0, l)];
            let a = &est.g_ul_hat[l] * C64::new(ratio, 0.0);
            let b = &est.g_ul_hat[2 + l];
            assert!((a - b).norm() < 1e-12 * b.norm());
        }
    }

    #[test]
    fn estimate_energy_and_orthogonality() {
        // One UE, one AP, moderate SNR; E{|g_hat|^2} per element -> beta - c.
        let beta = DMatrix::from_element(1, 1, 1e-9);
        let cfg = estimation_cfg(16);
        let sigma2 = 16.0 * cfg.eta_w() * 1e-9; // pilot SNR 0 dB
        let mut rng = substream(21, &[]);
        let trials = 10_000;
        let (mut energy, mut cross, mut count) = (0.0, C64::new(0.0, 0.0), 0usize);
        let mut err_var = 0.0;
        for _ in 0..trials {
            let h = draw_small_scale(&mut rng, 1, 1, 8, 1);
            let (ul, _) = true_channels(&beta, &h, &[UeOffsets::identity(1)]);
            let est = mmse_estimate(&mut rng, &ul, &beta, &[0], &cfg, sigma2);
            let hat = &est.g_ul_hat[0];
            let err = &ul[0] - hat;
            energy += hat.norm_squared() / 8.0;
            cross += hat.dotc(&err);
            count += 8;
            err_var = est.err_var[(0, 0)];
        }
        let mean_energy = energy / trials as f64;
        let target = 1e-9 - err_var;
        assert!((mean_energy / target - 1.0).abs() < 0.02, "{mean_energy} vs {target}");
        // estimate and error uncorrelated
        let corr = cross.norm() / count as f64;
        let scale = (target * err_var).sqrt();
        assert!(corr < 3.0 / (count as f64).sqrt() * scale, "{corr}");
    }
}
