//! Monte Carlo driver over setups (geometry) and coherence blocks (fading).
//!
//! Setups run in parallel. Within a setup, every mode and precoder sees the
//! same geometry, fading, UE offsets, data and noise, so comparisons are
//! paired. Pcal replaces the drawn offsets with identity.

use rayon::prelude::*;

use crate::channel::{draw_ue_offsets, ChannelRealization, UeOffsets};
use crate::config::{DerivedConstants, Mode, PrecoderKind, SystemConfig};
use crate::dstbc::{Design, SpaceTimeCodebook};
use crate::error::SimError;
use crate::link::{simulate_coherent_block, simulate_dstbc_block, BlockResult, Detector, LinkModel};
use crate::metrics::{AggregateReport, RunMetadata, TrialMetrics};
use crate::precoding::{power_alloc_centralized, radiated_power, PrecoderSet};
use crate::rng::{substream, tag};
use crate::topology::NetworkRealization;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 3;

/// Which comparisons a run covers.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub modes: Vec<Mode>,
    pub precoders: Vec<PrecoderKind>,
    pub detector: Detector,
}

impl RunOptions {
    pub fn all() -> Self {
        RunOptions {
            modes: Mode::ALL.to_vec(),
            precoders: PrecoderKind::ALL.to_vec(),
            detector: Detector::Decoupled,
        }
    }

    /// Only the mode and precoder named in the config.
    pub fn from_config(cfg: &SystemConfig) -> Self {
        RunOptions {
            modes: vec![cfg.mode],
            precoders: vec![cfg.precoder],
            detector: Detector::Decoupled,
        }
    }
}

/// Everything one setup contributes to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupOutcome {
    pub rows: Vec<TrialMetrics>,
    /// Per precoder: largest over APs of the block-averaged expected power.
    pub max_ap_power_w: Vec<(PrecoderKind, f64)>,
    pub regularized_blocks: u64,
}

/// Draws the network of a setup, retrying placement on fresh substreams.
pub fn generate_network(cfg: &SystemConfig, setup_id: usize) -> Result<NetworkRealization, SimError> {
    let mut last = None;
    for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut rng = substream(cfg.seed, &[setup_id as u64, attempt as u64, tag::TOPOLOGY]);
        match NetworkRealization::generate(&mut rng, cfg) {
            Ok(net) => return Ok(net),
            Err(e) => last = Some(e),
        }
    }
    Err(SimError::SetupFailed {
        setup: setup_id,
        attempts: MAX_PLACEMENT_ATTEMPTS,
        source: last.expect("at least one attempt"),
    })
}

fn offsets_for(cfg: &SystemConfig, setup_id: usize, block: usize, num_ues: usize) -> Vec<UeOffsets> {
    let path = if cfg.redraw_offsets_per_block {
        vec![setup_id as u64, block as u64, tag::OFFSETS]
    } else {
        vec![setup_id as u64, tag::OFFSETS]
    };
    draw_ue_offsets(&mut substream(cfg.seed, &path), num_ues, cfg.ue_antennas)
}

struct SetupContext<'a> {
    cfg: &'a SystemConfig,
    derived: DerivedConstants,
    codebook: &'a SpaceTimeCodebook,
    net: &'a NetworkRealization,
    setup_id: usize,
    detector: Detector,
}

impl SetupContext<'_> {
    fn offsets(&self, mode: Mode, block: usize) -> Vec<UeOffsets> {
        if mode.has_ue_offsets() {
            offsets_for(self.cfg, self.setup_id, block, self.net.num_ues())
        } else {
            vec![UeOffsets::identity(self.cfg.ue_antennas); self.net.num_ues()]
        }
    }

    fn channels(&self, mode: Mode, block: usize) -> ChannelRealization {
        let offsets = self.offsets(mode, block);
        let mut rng = substream(self.cfg.seed, &[self.setup_id as u64, block as u64, tag::CHANNEL]);
        ChannelRealization::generate(&mut rng, self.net, &offsets, self.cfg, self.derived.noise_power_w)
    }

    fn link_noise(&self) -> f64 {
        if self.cfg.noiseless {
            0.0
        } else {
            self.derived.noise_power_w
        }
    }

    /// Centralized coefficients from the block-averaged unit-precoder power.
    fn pmmse_coefficients(&self, mode: Mode) -> Result<Vec<f64>, SimError> {
        let k = self.net.num_ues();
        let mut norm = vec![0.0; k];
        let decoding = crate::precoding::decoding_matrix(self.cfg.ue_antennas, self.cfg.streams);
        for block in 0..self.cfg.n_blocks_per_setup {
            let ch = self.channels(mode, block);
            let unit = PrecoderSet::pmmse_unit_all(&ch, self.net, self.cfg, self.derived.noise_power_w)?;
            for (acc, ws) in norm.iter_mut().zip(&unit) {
                *acc += ws.iter().map(|w| radiated_power(w, &decoding)).sum::<f64>();
            }
        }
        let blocks = self.cfg.n_blocks_per_setup as f64;
        norm.iter_mut().for_each(|v| *v /= blocks);
        Ok(power_alloc_centralized(
            &self.net.beta,
            &self.net.clusters,
            &self.net.served_by,
            &norm,
            self.cfg.rho_max_w(),
            self.cfg.varsigma,
            self.cfg.kappa,
        ))
    }

    fn precoders(&self, kind: PrecoderKind, ch: &ChannelRealization, rho: &[f64]) -> Result<PrecoderSet, SimError> {
        Ok(match kind {
            PrecoderKind::Zisi => PrecoderSet::zisi(ch, self.net, self.cfg),
            PrecoderKind::Pmmse => {
                let unit = PrecoderSet::pmmse_unit_all(ch, self.net, self.cfg, self.derived.noise_power_w)?;
                PrecoderSet::pmmse(unit, rho, self.cfg)
            }
        })
    }

    fn simulate_block(&self, mode: Mode, link: &LinkModel, pre: &PrecoderSet, block: usize) -> Result<BlockResult, SimError> {
        let mut rng = substream(self.cfg.seed, &[self.setup_id as u64, block as u64, tag::DATA]);
        let noise = self.link_noise();
        Ok(match mode {
            Mode::Pcal | Mode::Uncal => simulate_coherent_block(link, self.cfg, noise, &pre.regularized, &mut rng)?,
            Mode::Dstbc => simulate_dstbc_block(
                link,
                &self.derived,
                self.codebook,
                noise,
                &pre.regularized,
                self.detector,
                &mut rng,
            )?,
        })
    }
}

/// Runs every requested (mode, precoder) pair on a given network.
pub fn run_on_network(
    cfg: &SystemConfig,
    opts: &RunOptions,
    codebook: &SpaceTimeCodebook,
    setup_id: usize,
    net: &NetworkRealization,
) -> Result<SetupOutcome, SimError> {
    let ctx = SetupContext {
        cfg,
        derived: cfg.derive(),
        codebook,
        net,
        setup_id,
        detector: opts.detector,
    };
    let num_ues = net.num_ues();
    let mut rows = Vec::new();
    let mut max_power: Vec<(PrecoderKind, f64)> = opts.precoders.iter().map(|&p| (p, 0.0)).collect();
    let mut regularized_blocks = 0;
    for &mode in &opts.modes {
        for (pi, &kind) in opts.precoders.iter().enumerate() {
            let rho = match kind {
                PrecoderKind::Pmmse => ctx.pmmse_coefficients(mode)?,
                PrecoderKind::Zisi => Vec::new(),
            };
            let mut errors = vec![0u64; num_ues];
            let mut bits = vec![0u64; num_ues];
            let mut ap_energy = vec![0.0; net.num_aps()];
            for block in 0..cfg.n_blocks_per_setup {
                let ch = ctx.channels(mode, block);
                let pre = ctx.precoders(kind, &ch, &rho)?;
                for (acc, p) in ap_energy.iter_mut().zip(pre.ap_powers(net)) {
                    *acc += p;
                }
                if pre.regularized.iter().any(|&f| f) {
                    regularized_blocks += 1;
                }
                let link = LinkModel::new(net, &ch, &pre);
                let result = ctx.simulate_block(mode, &link, &pre, block)?;
                for k in 0..num_ues {
                    errors[k] += result.bit_errors(k) as u64;
                    bits[k] += result.bits(k) as u64;
                }
            }
            let blocks = cfg.n_blocks_per_setup.max(1) as f64;
            let peak = ap_energy.iter().map(|e| e / blocks).fold(0.0, f64::max);
            max_power[pi].1 = max_power[pi].1.max(peak);
            let prelog = ctx.derived.prelog(mode);
            rows.extend((0..num_ues).map(|k| {
                TrialMetrics::new(setup_id, k, mode, kind, bits[k], errors[k], prelog, cfg.psk_order)
            }));
        }
    }
    Ok(SetupOutcome {
        rows,
        max_ap_power_w: max_power,
        regularized_blocks,
    })
}

pub fn build_codebook(cfg: &SystemConfig) -> Result<SpaceTimeCodebook, SimError> {
    let design = Design::for_span(cfg.cluster_size)?;
    Ok(SpaceTimeCodebook::build(cfg.psk_order, design)?)
}

/// One setup in isolation; identical to its share of a full run.
pub fn run_setup(cfg: &SystemConfig, opts: &RunOptions, setup_id: usize) -> Result<SetupOutcome, SimError> {
    let codebook = build_codebook(cfg)?;
    let net = generate_network(cfg, setup_id)?;
    run_on_network(cfg, opts, &codebook, setup_id, &net)
}

pub fn run_monte_carlo(cfg: &SystemConfig, opts: &RunOptions) -> Result<AggregateReport, SimError> {
    cfg.validate()?;
    let codebook = build_codebook(cfg)?;
    let outcomes: Vec<SetupOutcome> = (0..cfg.n_setups)
        .into_par_iter()
        .map(|s| {
            let net = generate_network(cfg, s)?;
            run_on_network(cfg, opts, &codebook, s, &net)
        })
        .collect::<Result<_, SimError>>()?;

    let mut rows = Vec::new();
    let mut max_power: Vec<(PrecoderKind, f64)> = opts.precoders.iter().map(|&p| (p, 0.0)).collect();
    let mut regularized_blocks = 0;
    for outcome in outcomes {
        rows.extend(outcome.rows);
        for (acc, (_, p)) in max_power.iter_mut().zip(outcome.max_ap_power_w) {
            acc.1 = acc.1.max(p);
        }
        regularized_blocks += outcome.regularized_blocks;
    }
    let derived = cfg.derive();
    let metadata = RunMetadata {
        prelog_coherent: derived.prelog_coherent,
        prelog_dstbc: derived.prelog_dstbc,
        rho_max_w: cfg.rho_max_w(),
        max_ap_power_w: max_power,
        regularized_blocks,
        config: cfg.clone(),
        derived,
    };
    AggregateReport::from_rows(rows, Some(metadata))
}
