//! ZISI and P-MMSE precoders, the fixed UE decoding matrix and the two
//! power-allocation heuristics.

use nalgebra::DMatrix;

use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::PrecodingError;
use crate::topology::NetworkRealization;
use crate::C64;

/// Relative size of the diagonal loading applied to a near-singular Gram matrix.
pub const GRAM_REGULARIZATION: f64 = 1e-12;

/// `M = I_{N_s} (x) 1_{N_b}`: stream `j` is the sum over antenna group `j`.
pub fn decoding_matrix(ue_antennas: usize, streams: usize) -> DMatrix<C64> {
    let group = ue_antennas / streams;
    DMatrix::from_fn(ue_antennas, streams, |r, c| {
        if r / group == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// ZISI direction `G (G^H G)^{-1}` with unit power scaling.
///
/// A Gram matrix whose Cholesky factor is missing or has a diagonal
/// dynamic range below `sqrt(1e-12)` is loaded with `eps I`,
/// `eps = 1e-12 tr(G^H G) / N_UE`, and the result is flagged.
pub fn zisi_unit(g_hat: &DMatrix<C64>) -> (DMatrix<C64>, bool) {
    let gram = g_hat.adjoint() * g_hat;
    let n = gram.nrows();
    let well_conditioned = gram.clone().cholesky().map(|chol| {
        let diag = chol.l().diagonal();
        let max = diag.iter().map(|d| d.re).fold(0.0, f64::max);
        let min = diag.iter().map(|d| d.re).fold(f64::INFINITY, f64::min);
        max > 0.0 && (min / max).powi(2) >= GRAM_REGULARIZATION
    });
    let (gram, regularized) = match well_conditioned {
        Some(true) => (gram, false),
        _ => {
            let trace: f64 = gram.diagonal().iter().map(|d| d.re).sum();
            let eps = (GRAM_REGULARIZATION * trace / n as f64).max(f64::MIN_POSITIVE);
            (gram + DMatrix::<C64>::identity(n, n) * C64::new(eps, 0.0), true)
        }
    };
    let inverse = gram
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| gram.try_inverse())
        .unwrap_or_else(|| DMatrix::zeros(n, n));
    (g_hat * inverse, regularized)
}

pub fn zisi_precoder(g_hat: &DMatrix<C64>, rho: f64) -> (DMatrix<C64>, bool) {
    let (w, flag) = zisi_unit(g_hat);
    (w * C64::new(rho.sqrt(), 0.0), flag)
}

/// Average radiated power `||W M||_F^2` per unit-modulus symbol.
pub fn radiated_power(w: &DMatrix<C64>, decoding: &DMatrix<C64>) -> f64 {
    (w * decoding).norm_squared()
}

/// UEs whose serving clusters overlap that of UE `k` (UE `k` included).
pub fn partial_set(k: usize, clusters: &[Vec<usize>]) -> Vec<usize> {
    clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|l| clusters[k].contains(l)))
        .map(|(i, _)| i)
        .collect()
}

/// Unit-power P-MMSE blocks `eta [sum_i eta (G_i G_i^H + Z_i) + sigma^2 I]^{-1} G_k`
/// for UE `k`, one `N_AP x N_UE` block per serving AP in cluster order.
///
/// The system is solved on the APs serving any UE of the partial set; all
/// other rows and columns of the full `L N_AP` system are zero.
pub fn pmmse_unit(
    k: usize,
    channels: &ChannelRealization,
    net: &NetworkRealization,
    eta: f64,
    sigma2: f64,
) -> Result<Vec<DMatrix<C64>>, PrecodingError> {
    let partial = partial_set(k, &net.clusters);
    let mut aps: Vec<usize> = partial.iter().flat_map(|&i| net.clusters[i].iter().copied()).collect();
    aps.sort_unstable();
    aps.dedup();
    let g0 = channels.ul_hat(k, net.clusters[k][0]);
    let (n_ap, n_ue) = g0.shape();
    let slot = |l: usize| aps.binary_search(&l).expect("AP in union") * n_ap;
    let dim = aps.len() * n_ap;

    let mut system = DMatrix::<C64>::identity(dim, dim) * C64::new(sigma2, 0.0);
    for &i in &partial {
        for &l1 in &net.clusters[i] {
            let g1 = channels.ul_hat(i, l1);
            if g1.shape() != (n_ap, n_ue) {
                return Err(PrecodingError::Dimension(format!(
                    "estimate ({i}, {l1}) is {:?}, expected {:?}",
                    g1.shape(),
                    (n_ap, n_ue)
                )));
            }
            for &l2 in &net.clusters[i] {
                let outer = g1 * channels.ul_hat(i, l2).adjoint() * C64::new(eta, 0.0);
                let mut view = system.view_mut((slot(l1), slot(l2)), (n_ap, n_ap));
                view += outer;
            }
            let load = eta * n_ue as f64 * channels.err_var[(i, l1)];
            for d in 0..n_ap {
                system[(slot(l1) + d, slot(l1) + d)] += C64::new(load, 0.0);
            }
        }
    }

    let mut rhs = DMatrix::<C64>::zeros(dim, n_ue);
    for &l in &net.clusters[k] {
        rhs.view_mut((slot(l), 0), (n_ap, n_ue)).copy_from(channels.ul_hat(k, l));
    }
    let solution = match system.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => system.lu().solve(&rhs).ok_or(PrecodingError::Singular { ue: k })?,
    };
    Ok(net.clusters[k]
        .iter()
        .map(|&l| solution.view((slot(l), 0), (n_ap, n_ue)) * C64::new(eta, 0.0))
        .collect())
}

/// Distributed allocation
/// `rho_{k,l} = rho_max / ||W_unit M||^2 * sqrt(beta_{k,l}) / sum_{k' in K_l} sqrt(beta_{k',l})`.
///
/// `unit_power[k][m]` is the radiated power of UE `k`'s unit precoder at its
/// `m`-th serving AP. Returns coefficients in the same layout.
pub fn power_alloc_distributed(
    beta: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    served_by: &[Vec<usize>],
    unit_power: &[Vec<f64>],
    rho_max: f64,
) -> Vec<Vec<f64>> {
    clusters
        .iter()
        .enumerate()
        .map(|(k, cluster)| {
            cluster
                .iter()
                .enumerate()
                .map(|(m, &l)| {
                    let total: f64 = served_by[l].iter().map(|&i| beta[(i, l)].sqrt()).sum();
                    let share = beta[(k, l)].sqrt() / total;
                    let norm = unit_power[k][m];
                    if norm > 0.0 {
                        rho_max / norm * share
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Centralized allocation with exponents `varsigma`, `kappa`:
/// `rho_k = rho_max / rho_norm_k * w_k / max_{l in L_k} sum_{i in K_l} w_i`,
/// where `w_i = (sum_{l in L_i} beta_{i,l}^varsigma)^kappa`.
pub fn power_alloc_centralized(
    beta: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    served_by: &[Vec<usize>],
    rho_norm: &[f64],
    rho_max: f64,
    varsigma: f64,
    kappa: f64,
) -> Vec<f64> {
    let weight: Vec<f64> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| c.iter().map(|&l| beta[(i, l)].powf(varsigma)).sum::<f64>().powf(kappa))
        .collect();
    clusters
        .iter()
        .enumerate()
        .map(|(k, cluster)| {
            let worst = cluster
                .iter()
                .map(|&l| served_by[l].iter().map(|&i| weight[i]).sum::<f64>())
                .fold(0.0, f64::max);
            if rho_norm[k] > 0.0 && worst > 0.0 {
                rho_max / rho_norm[k] * weight[k] / worst
            } else {
                0.0
            }
        })
        .collect()
}

/// Fraction `w_k / max_{l in L_k} sum_{i in K_l} w_i` of the centralized rule.
pub fn centralized_fraction(
    beta: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    served_by: &[Vec<usize>],
    varsigma: f64,
    kappa: f64,
) -> Vec<f64> {
    power_alloc_centralized(beta, clusters, served_by, &vec![1.0; clusters.len()], 1.0, varsigma, kappa)
}

/// Scaled precoders of one coherence block.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    /// `w[k][m]`: precoder of UE `k` at its `m`-th serving AP.
    pub w: Vec<Vec<DMatrix<C64>>>,
    /// Per-UE flag: a Gram matrix needed diagonal loading.
    pub regularized: Vec<bool>,
    pub decoding: DMatrix<C64>,
}

impl PrecoderSet {
    /// ZISI with distributed power allocation.
    pub fn zisi(channels: &ChannelRealization, net: &NetworkRealization, cfg: &SystemConfig) -> Self {
        let decoding = decoding_matrix(cfg.ue_antennas, cfg.streams);
        let mut regularized = vec![false; net.num_ues()];
        let unit: Vec<Vec<DMatrix<C64>>> = net
            .clusters
            .iter()
            .enumerate()
            .map(|(k, cluster)| {
                cluster
                    .iter()
                    .map(|&l| {
                        let (w, flag) = zisi_unit(channels.ul_hat(k, l));
                        regularized[k] |= flag;
                        w
                    })
                    .collect()
            })
            .collect();
        let unit_power: Vec<Vec<f64>> = unit
            .iter()
            .map(|ws| ws.iter().map(|w| radiated_power(w, &decoding)).collect())
            .collect();
        let rho = power_alloc_distributed(&net.beta, &net.clusters, &net.served_by, &unit_power, cfg.rho_max_w());
        let w = unit
            .into_iter()
            .zip(&rho)
            .map(|(ws, rs)| ws.into_iter().zip(rs).map(|(w, r)| w * C64::new(r.sqrt(), 0.0)).collect())
            .collect();
        PrecoderSet {
            w,
            regularized,
            decoding,
        }
    }

    /// Unit-power P-MMSE blocks for every UE.
    pub fn pmmse_unit_all(
        channels: &ChannelRealization,
        net: &NetworkRealization,
        cfg: &SystemConfig,
        sigma2: f64,
    ) -> Result<Vec<Vec<DMatrix<C64>>>, PrecodingError> {
        (0..net.num_ues())
            .map(|k| pmmse_unit(k, channels, net, cfg.eta_w(), sigma2))
            .collect()
    }

    /// P-MMSE scaled by per-UE centralized coefficients.
    pub fn pmmse(unit: Vec<Vec<DMatrix<C64>>>, rho: &[f64], cfg: &SystemConfig) -> Self {
        let n = unit.len();
        let w = unit
            .into_iter()
            .zip(rho)
            .map(|(ws, r)| ws.into_iter().map(|w| w * C64::new(r.sqrt(), 0.0)).collect())
            .collect();
        PrecoderSet {
            w,
            regularized: vec![false; n],
            decoding: decoding_matrix(cfg.ue_antennas, cfg.streams),
        }
    }

    /// Expected radiated power of every AP for i.i.d. unit-modulus symbols.
    pub fn ap_powers(&self, net: &NetworkRealization) -> Vec<f64> {
        let mut power = vec![0.0; net.num_aps()];
        for (k, cluster) in net.clusters.iter().enumerate() {
            for (m, &l) in cluster.iter().enumerate() {
                power[l] += radiated_power(&self.w[k][m], &self.decoding);
            }
        }
        power
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_normal_matrix, UeOffsets};
    use crate::rng::substream;
    use crate::topology::served_by;
    use rand::Rng;

    fn identity(n: usize) -> DMatrix<C64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn decoding_matrix_shapes() {
        assert_eq!(decoding_matrix(2, 2), identity(2));
        let m = decoding_matrix(4, 2);
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let expect = DMatrix::from_row_slice(4, 2, &[one, zero, one, zero, zero, one, zero, one]);
        assert_eq!(m, expect);
        for (n_ue, n_s) in [(2, 1), (4, 2), (4, 4), (6, 3)] {
            let m = decoding_matrix(n_ue, n_s);
            let gram = m.adjoint() * &m;
            assert_eq!(gram, identity(n_s) * C64::new((n_ue / n_s) as f64, 0.0));
            for r in 0..n_ue {
                assert_eq!(m.row(r).iter().filter(|v| **v == one).count(), 1);
            }
        }
    }

    #[test]
    fn zisi_orthonormal_columns() {
        let g = complex_normal_matrix(&mut substream(1, &[]), 8, 2);
        let q = g.qr().q();
        let (w, flag) = zisi_precoder(&q, 0.3);
        assert!(!flag);
        assert!((w - &q * C64::new(0.3f64.sqrt(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zisi_single_antenna() {
        let g = complex_normal_matrix(&mut substream(2, &[]), 8, 1);
        let (w, _) = zisi_precoder(&g, 2.0);
        let expect = &g * C64::new(2f64.sqrt() / g.norm_squared(), 0.0);
        assert!((&w - &expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn zisi_defining_identity() {
        let mut rng = substream(3, &[]);
        for _ in 0..50 {
            let g = complex_normal_matrix(&mut rng, 8, 2) * C64::new(1e-4, 0.0);
            let rho: f64 = rng.gen_range(0.01..10.0);
            let (w, _) = zisi_precoder(&g, rho);
            let prod = g.adjoint() * w;
            assert!((prod - identity(2) * C64::new(rho.sqrt(), 0.0)).norm() < 1e-10 * rho.sqrt());
        }
    }

    #[test]
    fn zisi_singular_gram_is_flagged() {
        let col = complex_normal_matrix(&mut substream(4, &[]), 8, 1);
        let g = DMatrix::from_fn(8, 2, |r, _| col[(r, 0)]);
        let (w, flag) = zisi_unit(&g);
        assert!(flag);
        assert!(w.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    /// Network with explicit clusters and all UEs on distinct pilots.
    fn toy_network(beta: DMatrix<f64>, clusters: Vec<Vec<usize>>) -> NetworkRealization {
        let (k, l) = beta.shape();
        let served = served_by(&clusters, l);
        NetworkRealization {
            ap_pos: vec![crate::topology::Point::new(0.0, 0.0); l],
            ue_pos: vec![crate::topology::Point::new(0.0, 0.0); k],
            beta,
            clusters,
            served_by: served,
            pilot_group: (0..k).collect(),
        }
    }

    fn toy_channels(seed: u64, net: &NetworkRealization, n_ap: usize, n_ue: usize) -> ChannelRealization {
        let mut rng = substream(seed, &[]);
        let (k, l) = net.beta.shape();
        let small = crate::channel::draw_small_scale(&mut rng, k, l, n_ap, n_ue);
        let (ul, dl) = crate::channel::true_channels(&net.beta, &small, &vec![UeOffsets::identity(n_ue); k]);
        ChannelRealization {
            num_aps: l,
            g_ul_hat: ul.clone(),
            g_ul_true: ul,
            g_dl_true: dl,
            err_var: DMatrix::zeros(k, l),
        }
    }

    #[test]
    fn partial_sets_follow_cluster_overlap() {
        let clusters = vec![vec![0, 1], vec![1, 2], vec![3, 4]];
        assert_eq!(partial_set(0, &clusters), vec![0, 1]);
        assert_eq!(partial_set(1, &clusters), vec![0, 1]);
        assert_eq!(partial_set(2, &clusters), vec![2]);
    }

    #[test]
    fn pmmse_maximum_ratio_limit() {
        let net = toy_network(DMatrix::from_element(1, 2, 1e-8), vec![vec![0, 1]]);
        let ch = toy_channels(5, &net, 4, 2);
        let sigma2 = 1e6;
        let w = pmmse_unit(0, &ch, &net, 0.05, sigma2).unwrap();
        for (m, &l) in net.clusters[0].iter().enumerate() {
            let expect = ch.ul_hat(0, l) * C64::new(0.05 / sigma2, 0.0);
            assert!((&w[m] - &expect).norm() < 1e-9 * expect.norm());
        }
    }

    #[test]
    fn pmmse_zero_forcing_limit() {
        let net = toy_network(DMatrix::from_element(1, 2, 1e-8), vec![vec![0, 1]]);
        let ch = toy_channels(6, &net, 4, 2);
        let eta = 0.05;
        let sigma2 = 1e-12 * eta * 1e-8;
        let w = pmmse_unit(0, &ch, &net, eta, sigma2).unwrap();
        let mut eff = DMatrix::<C64>::zeros(2, 2);
        for (m, &l) in net.clusters[0].iter().enumerate() {
            eff += ch.ul_hat(0, l).adjoint() * &w[m];
        }
        // G^H W -> I when the regularizer vanishes
        assert!((&eff - identity(2)).norm() < 1e-6, "{eff}");
    }

    #[test]
    fn pmmse_disjoint_clusters_independent() {
        let net = toy_network(DMatrix::from_element(2, 4, 1e-8), vec![vec![0, 1], vec![2, 3]]);
        let ch = toy_channels(7, &net, 4, 2);
        let mut other = ch.clone();
        for l in 0..4 {
            other.g_ul_hat[4 + l] = complex_normal_matrix(&mut substream(99, &[l as u64]), 4, 2);
        }
        let a = pmmse_unit(0, &ch, &net, 0.05, 1e-13).unwrap();
        let b = pmmse_unit(0, &other, &net, 0.05, 1e-13).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distributed_single_ue_gets_full_budget() {
        let beta = DMatrix::from_element(1, 1, 1e-9);
        let rho = power_alloc_distributed(&beta, &[vec![0]], &[vec![0]], &[vec![4.0]], 0.2);
        assert!((rho[0][0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn distributed_equal_gains_split_evenly() {
        let beta = DMatrix::from_element(2, 1, 1e-9);
        let clusters = vec![vec![0], vec![0]];
        let rho = power_alloc_distributed(&beta, &clusters, &served_by(&clusters, 1), &[vec![1.0], vec![1.0]], 0.2);
        assert!((rho[0][0] - 0.1).abs() < 1e-15);
        assert!((rho[1][0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn centralized_examples() {
        let beta = DMatrix::from_element(1, 2, 1e-9);
        let clusters = vec![vec![0, 1]];
        let served = served_by(&clusters, 2);
        let rho = power_alloc_centralized(&beta, &clusters, &served, &[4.0], 0.2, 0.2, 0.5);
        assert!((rho[0] - 0.05).abs() < 1e-15);

        let beta = DMatrix::from_element(2, 1, 3e-9);
        let clusters = vec![vec![0], vec![0]];
        let frac = centralized_fraction(&beta, &clusters, &served_by(&clusters, 1), 0.2, 0.5);
        assert!((frac[0] - 0.5).abs() < 1e-15 && (frac[1] - 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_clusters(rng: &mut impl Rng, k: usize, l: usize, lk: usize) -> Vec<Vec<usize>> {
            (0..k)
                .map(|_| {
                    let mut aps: Vec<usize> = (0..l).collect();
                    for i in 0..lk {
                        let j = rng.gen_range(i..l);
                        aps.swap(i, j);
                    }
                    aps.truncate(lk);
                    aps
                })
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn distributed_budget_respected(seed in 0u64..10_000) {
                let mut rng = substream(seed, &[]);
                let (k, l) = (8, 6);
                let beta = DMatrix::from_fn(k, l, |_, _| 10f64.powf(rng.gen_range(-12.0..-7.0)));
                let clusters = random_clusters(&mut rng, k, l, 2);
                let served = served_by(&clusters, l);
                let unit: Vec<Vec<f64>> = clusters.iter().map(|c| c.iter().map(|_| rng.gen_range(1e3..1e9)).collect()).collect();
                let rho = power_alloc_distributed(&beta, &clusters, &served, &unit, 0.2);
                let mut used = vec![0.0; l];
                for (kk, c) in clusters.iter().enumerate() {
                    for (m, &ll) in c.iter().enumerate() {
                        used[ll] += rho[kk][m] * unit[kk][m];
                    }
                }
                for (ll, u) in used.iter().enumerate() {
                    if served[ll].is_empty() {
                        prop_assert_eq!(*u, 0.0);
                    } else {
                        prop_assert!((u - 0.2).abs() <= 0.2 * 1e-12);
                    }
                }
            }

            #[test]
            fn centralized_fraction_scale_invariant(seed in 0u64..10_000, scale_db in -30.0f64..30.0) {
                let mut rng = substream(seed, &[]);
                let (k, l) = (6, 5);
                let beta = DMatrix::from_fn(k, l, |_, _| 10f64.powf(rng.gen_range(-12.0..-7.0)));
                let clusters = random_clusters(&mut rng, k, l, 2);
                let served = served_by(&clusters, l);
                let a = centralized_fraction(&beta, &clusters, &served, 0.2, 0.5);
                let scaled = &beta * 10f64.powf(scale_db / 10.0);
                let b = centralized_fraction(&scaled, &clusters, &served, 0.2, 0.5);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!(*x > 0.0 && *x <= 1.0);
                }
            }
        }
    }
}
