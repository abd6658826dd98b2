//! One coherence block of downlink transmission.
//!
//! All UEs are simulated jointly: every AP transmits the sum of the
//! precoded signals of the UEs it serves, and each UE receives the
//! superposition from all APs plus white noise. Interference is therefore
//! exact rather than modelled.

use nalgebra::DMatrix;
use rand::Rng;

use crate::channel::{complex_normal_matrix, ChannelRealization};
use crate::config::{DerivedConstants, SystemConfig};
use crate::dstbc::{detect_ml_decoupled, detect_ml_full, extract_stream, rows_for_ap, EncoderState, SpaceTimeCodebook};
use crate::error::CodecError;
use crate::precoding::PrecoderSet;
use crate::psk::Psk;
use crate::topology::NetworkRealization;
use crate::C64;

/// Which differential detector the UEs run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Detector {
    #[default]
    Decoupled,
    Full,
}

/// Bits of one block for every UE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockResult {
    pub tx_bits: Vec<Vec<u8>>,
    pub rx_bits: Vec<Vec<u8>>,
    /// A precoder of this UE needed Gram regularization.
    pub regularized: Vec<bool>,
}

impl BlockResult {
    pub fn bit_errors(&self, k: usize) -> usize {
        self.tx_bits[k]
            .iter()
            .zip(&self.rx_bits[k])
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn bits(&self, k: usize) -> usize {
        self.tx_bits[k].len()
    }
}

/// Effective channels from every (UE, serving-AP, stream) input to every
/// UE antenna, `G_dl(k, l) W(i, l) M_i`.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub num_ues: usize,
    pub ue_antennas: usize,
    pub streams: usize,
    pub span: usize,
    /// `K N_UE x K L_k N_s`; column `(i L_k + m) N_s + j` is stream `j` of
    /// UE `i` sent from its `m`-th serving AP.
    pub per_ap: DMatrix<C64>,
    /// `K N_UE x K N_s`: coherent transmission, all serving APs summed.
    pub coherent: DMatrix<C64>,
    pub decoding: DMatrix<C64>,
}

impl LinkModel {
    pub fn new(net: &NetworkRealization, channels: &ChannelRealization, precoders: &PrecoderSet) -> Self {
        let num_ues = net.num_ues();
        let decoding = precoders.decoding.clone();
        let (ue_antennas, streams) = decoding.shape();
        let span = net.clusters.first().map_or(0, |c| c.len());
        let mut per_ap = DMatrix::zeros(num_ues * ue_antennas, num_ues * span * streams);
        let mut coherent = DMatrix::zeros(num_ues * ue_antennas, num_ues * streams);
        for (i, cluster) in net.clusters.iter().enumerate() {
            for (m, &l) in cluster.iter().enumerate() {
                let wm = &precoders.w[i][m] * &decoding;
                for k in 0..num_ues {
                    let block = channels.dl(k, l) * &wm;
                    per_ap
                        .view_mut((k * ue_antennas, (i * span + m) * streams), (ue_antennas, streams))
                        .copy_from(&block);
                    let mut acc = coherent.view_mut((k * ue_antennas, i * streams), (ue_antennas, streams));
                    acc += &block;
                }
            }
        }
        LinkModel {
            num_ues,
            ue_antennas,
            streams,
            span,
            per_ap,
            coherent,
            decoding,
        }
    }

    /// Noiseless soft estimates `M^H y_k` for symbol columns
    /// (`K N_s x epochs`, UE-major). Returns the same layout.
    pub fn coherent_soft(&self, symbols: &DMatrix<C64>) -> DMatrix<C64> {
        self.soft_from_received(&(&self.coherent * symbols))
    }

    fn soft_from_received(&self, received: &DMatrix<C64>) -> DMatrix<C64> {
        let mut soft = DMatrix::zeros(self.num_ues * self.streams, received.ncols());
        let mh = self.decoding.adjoint();
        for k in 0..self.num_ues {
            let yk = received.rows(k * self.ue_antennas, self.ue_antennas);
            soft.view_mut((k * self.streams, 0), (self.streams, received.ncols()))
                .copy_from(&(&mh * yk));
        }
        soft
    }
}

fn push_label(bits: &mut Vec<u8>, psk: &Psk, index: usize) {
    bits.extend(psk.label_bits(index));
}

/// Coherent transmission over `tau_d` epochs with `M^H` combining and a
/// phase slicer per stream.
pub fn simulate_coherent_block<R: Rng + ?Sized>(
    link: &LinkModel,
    cfg: &SystemConfig,
    noise_power: f64,
    regularized: &[bool],
    rng: &mut R,
) -> Result<BlockResult, CodecError> {
    let psk = Psk::new(cfg.psk_order)?;
    let epochs = cfg.tau_d;
    let rows = link.num_ues * link.streams;
    let indices: Vec<usize> = (0..rows * epochs).map(|_| rng.gen_range(0..psk.order())).collect();
    // column-major: entry (r, p) at p * rows + r
    let symbols = DMatrix::from_fn(rows, epochs, |r, p| psk.point(indices[p * rows + r]));
    let mut received = &link.coherent * &symbols;
    if noise_power > 0.0 {
        received += complex_normal_matrix(rng, received.nrows(), epochs) * C64::new(noise_power.sqrt(), 0.0);
    }
    let soft = link.soft_from_received(&received);

    let mut tx_bits = vec![Vec::new(); link.num_ues];
    let mut rx_bits = vec![Vec::new(); link.num_ues];
    for k in 0..link.num_ues {
        for j in 0..link.streams {
            let r = k * link.streams + j;
            for p in 0..epochs {
                push_label(&mut tx_bits[k], &psk, indices[p * rows + r]);
                push_label(&mut rx_bits[k], &psk, psk.slice(soft[(r, p)]));
            }
        }
    }
    Ok(BlockResult {
        tx_bits,
        rx_bits,
        regularized: regularized.to_vec(),
    })
}

/// Differential STBC transmission: a reference interval carrying `C_0 = I`
/// followed by `G - 1` data codewords per stream, each AP sending its row
/// of every served UE's codeword matrices. Rows are scaled by `sqrt(L_k)`
/// so each AP radiates unit average power per stream and epoch.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dstbc_block<R: Rng + ?Sized>(
    link: &LinkModel,
    derived: &DerivedConstants,
    codebook: &SpaceTimeCodebook,
    noise_power: f64,
    regularized: &[bool],
    detector: Detector,
    rng: &mut R,
) -> Result<BlockResult, CodecError> {
    let span = link.span;
    if codebook.design.span() != span {
        return Err(CodecError::UnsupportedDesign(span));
    }
    let psk = &codebook.constellation;
    let (num_ues, streams) = (link.num_ues, link.streams);
    let n_sym = codebook.design.symbols();
    let intervals = derived.codeword_intervals;
    let per_stream = derived.dstbc_symbols_per_stream();
    let group = link.ue_antennas / streams;
    let amplitude = C64::new((span as f64).sqrt(), 0.0);

    // data[(i * N_s + j)] = symbol indices of stream j of UE i
    let data: Vec<Vec<usize>> = (0..num_ues * streams)
        .map(|_| (0..per_stream).map(|_| rng.gen_range(0..psk.order())).collect())
        .collect();
    let segments: Vec<Vec<&[usize]>> = data
        .iter()
        .map(|s| crate::dstbc::segment_stream(s, n_sym, intervals))
        .collect::<Result<_, _>>()?;

    let mut encoders: Vec<EncoderState> = (0..num_ues * streams).map(|_| EncoderState::new(span)).collect();
    let mut transmit = DMatrix::<C64>::zeros(num_ues * span * streams, span);
    let receive = |transmit: &DMatrix<C64>, rng: &mut R| {
        let mut y = &link.per_ap * transmit;
        if noise_power > 0.0 {
            y += complex_normal_matrix(rng, y.nrows(), span) * C64::new(noise_power.sqrt(), 0.0);
        }
        y
    };

    // Reference interval: row m of the identity from the m-th serving AP.
    for i in 0..num_ues {
        for m in 0..span {
            for j in 0..streams {
                transmit[((i * span + m) * streams + j, m)] = amplitude;
            }
        }
    }
    let mut previous = receive(&transmit, rng);

    let mut tx_bits = vec![Vec::new(); num_ues];
    let mut rx_bits = vec![Vec::new(); num_ues];
    for t in 1..intervals {
        for i in 0..num_ues {
            for j in 0..streams {
                let state = &mut encoders[i * streams + j];
                let x = codebook.codeword(segments[i * streams + j][t - 1]);
                for m in 0..span {
                    let row = rows_for_ap(state.current(), x, m + 1)? * amplitude;
                    transmit.row_mut((i * span + m) * streams + j).copy_from(&row);
                }
                state.encode(x);
            }
        }
        let current = receive(&transmit, rng);
        for k in 0..num_ues {
            let y_t = current.rows(k * link.ue_antennas, link.ue_antennas).into_owned();
            let y_p = previous.rows(k * link.ue_antennas, link.ue_antennas).into_owned();
            for j in 0..streams {
                let yt_j = extract_stream(&y_t, j + 1, group)?;
                let yp_j = extract_stream(&y_p, j + 1, group)?;
                let detection = match detector {
                    Detector::Decoupled => detect_ml_decoupled(&yt_j, &yp_j, codebook.design, psk)?,
                    Detector::Full => detect_ml_full(&yt_j, &yp_j, codebook)?,
                };
                for (&sent, &got) in segments[k * streams + j][t - 1].iter().zip(&detection.symbols) {
                    push_label(&mut tx_bits[k], psk, sent);
                    push_label(&mut rx_bits[k], psk, got);
                }
            }
        }
        previous = current;
    }
    Ok(BlockResult {
        tx_bits,
        rx_bits,
        regularized: regularized.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_small_scale, true_channels, UeOffsets};
    use crate::dstbc::Design;
    use crate::rng::substream;
    use crate::topology::{served_by, Point};

    fn single_ue(cfg: &SystemConfig, offsets: UeOffsets, seed: u64) -> (NetworkRealization, ChannelRealization) {
        let l = cfg.cluster_size;
        let beta = DMatrix::from_fn(1, l, |_, m| 1e-8 / (m + 1) as f64);
        let clusters = vec![(0..l).collect::<Vec<_>>()];
        let net = NetworkRealization {
            ap_pos: vec![Point::new(0.0, 0.0); l],
            ue_pos: vec![Point::new(0.0, 0.0)],
            served_by: served_by(&clusters, l),
            beta,
            clusters,
            pilot_group: vec![0],
        };
        let small = draw_small_scale(&mut substream(seed, &[]), 1, l, cfg.ap_antennas, cfg.ue_antennas);
        let (ul, dl) = true_channels(&net.beta, &small, &[offsets]);
        let ch = ChannelRealization {
            num_aps: l,
            g_ul_hat: ul.clone(),
            g_ul_true: ul,
            g_dl_true: dl,
            err_var: DMatrix::zeros(1, l),
        };
        (net, ch)
    }

    #[test]
    fn coherent_noise_only_gives_coin_flips() {
        let cfg = SystemConfig::default();
        let (net, ch) = single_ue(&cfg, UeOffsets::identity(2), 1);
        let pre = PrecoderSet::zisi(&ch, &net, &cfg);
        let link = LinkModel::new(&net, &ch, &pre);
        let mut rng = substream(2, &[]);
        let (mut errors, mut bits) = (0, 0);
        while bits < 10_000 {
            let r = simulate_coherent_block(&link, &cfg, 1e6, &pre.regularized, &mut rng).unwrap();
            errors += r.bit_errors(0);
            bits += r.bits(0);
        }
        let ber = errors as f64 / bits as f64;
        assert!((ber - 0.5).abs() < 0.02, "{ber}");
    }

    #[test]
    fn coherent_calibrated_noiseless_is_error_free() {
        let cfg = SystemConfig::default();
        let (net, ch) = single_ue(&cfg, UeOffsets::identity(2), 3);
        let pre = PrecoderSet::zisi(&ch, &net, &cfg);
        let link = LinkModel::new(&net, &ch, &pre);
        let r = simulate_coherent_block(&link, &cfg, 0.0, &pre.regularized, &mut substream(4, &[])).unwrap();
        assert_eq!(r.bits(0), 2 * 184 * 3);
        assert_eq!(r.bit_errors(0), 0);
    }

    #[test]
    fn coherent_uncalibrated_rotation_causes_errors() {
        // A pi/M rotation of the effective diagonal sits on the decision
        // boundary; nudging it past makes every symbol wrong.
        let cfg = SystemConfig::default();
        let angle = std::f64::consts::PI / 8.0 + 1e-3;
        let offsets = UeOffsets {
            tx: vec![C64::new(1.0, 0.0); 2],
            rx: vec![C64::from_polar(1.0, angle); 2],
        };
        let (net, ch) = single_ue(&cfg, offsets, 5);
        let pre = PrecoderSet::zisi(&ch, &net, &cfg);
        let link = LinkModel::new(&net, &ch, &pre);
        let r = simulate_coherent_block(&link, &cfg, 0.0, &pre.regularized, &mut substream(6, &[])).unwrap();
        let symbol_errors = r.tx_bits[0]
            .chunks(3)
            .zip(r.rx_bits[0].chunks(3))
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(symbol_errors, 2 * 184);
    }

    #[test]
    fn dstbc_single_ue_noiseless_with_offsets() {
        for span in [2usize, 4] {
            let mut cfg = SystemConfig::default();
            cfg.cluster_size = span;
            let derived = cfg.derive();
            let offsets = UeOffsets::random(&mut substream(7, &[span as u64]), 2);
            let (net, ch) = single_ue(&cfg, offsets, 8);
            let pre = PrecoderSet::zisi(&ch, &net, &cfg);
            let link = LinkModel::new(&net, &ch, &pre);
            let cb = SpaceTimeCodebook::build(8, Design::for_span(span).unwrap()).unwrap();
            let fast = simulate_dstbc_block(&link, &derived, &cb, 0.0, &pre.regularized, Detector::Decoupled, &mut substream(9, &[])).unwrap();
            let full = simulate_dstbc_block(&link, &derived, &cb, 0.0, &pre.regularized, Detector::Full, &mut substream(9, &[])).unwrap();
            assert_eq!(fast.bits(0), 2 * derived.dstbc_symbols_per_stream() * 3);
            assert_eq!(fast.bit_errors(0), 0);
            assert_eq!(fast, full);
        }
    }

    #[test]
    fn baseline_bit_budget() {
        let d = SystemConfig::default().derive();
        assert_eq!(d.dstbc_symbols_per_stream() * 3, 546);
    }
}
