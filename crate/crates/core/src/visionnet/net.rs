use super::blocks::{native_conv, phi_mix, stream_attention_block, AttentionWeights};
use super::{spacing_schedule, NetConfig, VisionError};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::voxelcore::{conform_for_network, normalize01, resample_to_geometry, Affine, BinaryMask, Interp, Spacing, VoxelGrid};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug)]
struct BlockIds {
    conv_w: ParamId,
    conv_b: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    q: ParamId,
    k: ParamId,
    v: ParamId,
    f_w: ParamId,
    f_b: ParamId,
}

fn normal(store: &mut ParamStore, rng: &mut impl Rng, name: String, shape: Vec<usize>, std: f64) -> ParamId {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let values = (0..n).map(|_| dist.sample(rng) as f32).collect();
    store.add(name, shape, values)
}

fn zeros(store: &mut ParamStore, name: String, shape: Vec<usize>) -> ParamId {
    let n = shape.iter().product();
    store.add(name, shape, vec![0.0; n])
}

impl BlockIds {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, cin: usize, cout: usize, cfg: &NetConfig) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        let b = cfg.attn_dim;
        BlockIds {
            conv_w: normal(store, rng, p("conv.w"), vec![cout, cin, 3, 3, 3], (2.0 / (cin * 27) as f64).sqrt()),
            conv_b: zeros(store, p("conv.b"), vec![cout]),
            mix_w: normal(store, rng, p("mix.w"), vec![cout, cout + cfg.phi_dim], (1.0 / (cout + cfg.phi_dim) as f64).sqrt()),
            mix_b: zeros(store, p("mix.b"), vec![cout]),
            q: normal(store, rng, p("att.q"), vec![b, cout], (1.0 / cout as f64).sqrt()),
            k: normal(store, rng, p("att.k"), vec![b, cout], (1.0 / cout as f64).sqrt()),
            v: normal(store, rng, p("att.v"), vec![b, cout], (1.0 / cout as f64).sqrt()),
            f_w: normal(store, rng, p("att.f.w"), vec![cout, b], 0.5 * (1.0 / b as f64).sqrt()),
            f_b: zeros(store, p("att.f.b"), vec![cout]),
        }
    }

    /// conv → SiLU → φ-mix → SiLU → stream attention → group norm.
    fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var, spacing: Spacing, phi: Var) -> Result<Var, VisionError> {
        let h = native_conv(tape, x, p.var(self.conv_w), p.var(self.conv_b), spacing)?;
        let h = tape.silu(h);
        let h = phi_mix(tape, h, phi, p.var(self.mix_w), p.var(self.mix_b))?;
        let h = tape.silu(h);
        let att = AttentionWeights { q: p.var(self.q), k: p.var(self.k), v: p.var(self.v), f_w: p.var(self.f_w), f_b: p.var(self.f_b) };
        let h = stream_attention_block(tape, h, &att)?;
        Ok(tape.group_norm(h)?)
    }
}

/// Encoder and generator weights, registered in a shared [`ParamStore`].
#[derive(Clone, Debug)]
pub struct VisionNet {
    cfg: NetConfig,
    enc: Vec<BlockIds>,
    enc_fc_w: ParamId,
    enc_fc_b: ParamId,
    gen: Vec<BlockIds>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Multi-scale features of every stream plus the pooled summaries.
#[derive(Clone, Debug)]
pub struct EncodingSet {
    /// Level `n` features, `[S, C_n, X_n, Y_n, Z_n]`.
    pub levels: Vec<Var>,
    /// Pooled summary ε°, `[S, d]`.
    pub pooled: Var,
    pub schedule: Vec<Spacing>,
    pub streams: usize,
    network_shape: [usize; 3],
    network_affine: Affine,
    reference_shape: [usize; 3],
    reference_affine: Affine,
}

impl EncodingSet {
    /// Grid the networks run on (the conformed first volume).
    pub fn network_geometry(&self) -> ([usize; 3], Affine) {
        (self.network_shape, self.network_affine)
    }

    /// Geometry of the first input volume as given.
    pub fn reference_geometry(&self) -> ([usize; 3], Affine) {
        (self.reference_shape, self.reference_affine)
    }

    /// A reference-geometry mask as 0/1 values on the network grid.
    pub fn target_on_network_grid(&self, m: &BinaryMask) -> Result<Vec<f64>, VisionError> {
        let g = m.to_grid();
        let g = if g.same_geometry(self.network_shape, &self.network_affine) {
            g
        } else {
            resample_to_geometry(&g, self.network_shape, &self.network_affine, Interp::Nearest)?
        };
        Ok(g.values().iter().map(|&v| v as f64).collect())
    }
}

#[derive(Clone, Debug)]
pub struct GenOutput {
    /// Stream-0 probabilities on the network grid, `[1, 1, X, Y, Z]`.
    pub probs: Var,
    /// Probabilities on the reference geometry.
    pub prob_map: VoxelGrid,
    /// `prob_map > 0.5`.
    pub mask: BinaryMask,
}

impl VisionNet {
    pub fn new(cfg: NetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, VisionError> {
        cfg.validate()?;
        let l = cfg.levels;
        let enc = (0..l)
            .map(|n| {
                let cin = if n == 0 { 1 } else { cfg.channels(n - 1) };
                BlockIds::new(store, rng, &format!("vision.enc.{n}"), cin, cfg.channels(n), &cfg)
            })
            .collect();
        let deep = cfg.channels(l - 1);
        let enc_fc_w = normal(store, rng, "vision.enc.fc.w".into(), vec![cfg.summary_dim, deep], (1.0 / deep as f64).sqrt());
        let enc_fc_b = zeros(store, "vision.enc.fc.b".into(), vec![cfg.summary_dim]);
        let gen = (0..l - 1)
            .map(|n| {
                let cin = cfg.channels(n + 1) + cfg.channels(n);
                BlockIds::new(store, rng, &format!("vision.gen.{n}"), cin, cfg.channels(n), &cfg)
            })
            .collect();
        let top = cfg.channels(0);
        let head_w = normal(store, rng, "vision.head.w".into(), vec![1, top, 3, 3, 3], (1.0 / (top * 27) as f64).sqrt());
        let head_b = zeros(store, "vision.head.b".into(), vec![1]);
        Ok(VisionNet { cfg, enc, enc_fc_w, enc_fc_b, gen, head_w, head_b })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Stack φ vectors (`[1, P]` each) into `[S, P]`; a single φ is shared.
    fn stack_phi(&self, tape: &mut Tape, phi: &[Var], streams: usize) -> Result<Var, VisionError> {
        if phi.len() != streams && phi.len() != 1 {
            return Err(VisionError::PhiCount { expected: streams, got: phi.len() });
        }
        for &v in phi {
            let s = tape.shape(v);
            if s.len() != 2 || s[0] != 1 || s[1] != self.cfg.phi_dim {
                return Err(VisionError::PhiWidth { expected: self.cfg.phi_dim, got: s.iter().product() });
            }
        }
        let rows: Vec<Var> = (0..streams).map(|s| phi[s.min(phi.len() - 1)]).collect();
        Ok(tape.concat(&rows, 0)?)
    }

    /// Encode `volumes` (one stream each) under per-stream φ.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, volumes: &[VoxelGrid], phi: &[Var]) -> Result<EncodingSet, VisionError> {
        let Some(first) = volumes.first() else {
            return Err(VisionError::NoVolumes);
        };
        if phi.len() != volumes.len() {
            return Err(VisionError::PhiCount { expected: volumes.len(), got: phi.len() });
        }
        let reference = conform_for_network(first)?;
        let (shape, affine) = (reference.shape(), *reference.affine());
        let mut data = Vec::with_capacity(volumes.len() * reference.len());
        for (i, v) in volumes.iter().enumerate() {
            let g = if i == 0 { reference.clone() } else { conform_for_network(v)? };
            let g = if g.same_geometry(shape, &affine) { g } else { resample_to_geometry(&g, shape, &affine, Interp::Linear)? };
            data.extend(normalize01(&g).values().iter().map(|&x| x as f64));
        }
        let s = volumes.len();
        let x = tape.constant(Tensor::new(vec![s, 1, shape[0], shape[1], shape[2]], data)?);
        let phi = self.stack_phi(tape, phi, s)?;
        let schedule = spacing_schedule(reference.spacing(), self.cfg.levels);

        let mut levels = Vec::with_capacity(self.cfg.levels);
        let mut h = x;
        for (n, block) in self.enc.iter().enumerate() {
            if n > 0 {
                h = downsample(tape, h, schedule[n - 1], schedule[n])?;
            }
            h = block.forward(tape, p, h, schedule[n], phi)?;
            levels.push(h);
        }
        let pooled = tape.global_max(h)?;
        let pooled = tape.linear(pooled, p.var(self.enc_fc_w), Some(p.var(self.enc_fc_b)))?;
        Ok(EncodingSet {
            levels,
            pooled,
            schedule,
            streams: s,
            network_shape: shape,
            network_affine: affine,
            reference_shape: first.shape(),
            reference_affine: *first.affine(),
        })
    }

    /// Decode one region from an encoding. `phi` holds one vector per
    /// stream, or a single vector shared by all streams.
    pub fn generate(&self, tape: &mut Tape, p: &BoundParams, enc: &EncodingSet, phi: &[Var]) -> Result<GenOutput, VisionError> {
        let l = self.cfg.levels;
        if enc.levels.len() != l || enc.schedule.len() != l {
            return Err(VisionError::LevelMismatch { expected: l, got: enc.levels.len() });
        }
        let phi = self.stack_phi(tape, phi, enc.streams)?;
        let mut h = enc.levels[l - 1];
        for n in (0..l - 1).rev() {
            let skip = enc.levels[n];
            let ss = tape.shape(skip);
            let target = [ss[2], ss[3], ss[4]];
            let ratio = [0.5, 0.5, enc.schedule[n].sep() / enc.schedule[n + 1].sep()];
            let up = tape.resize(h, target, ratio)?;
            let cat = tape.concat(&[up, skip], 1)?;
            h = self.gen[n].forward(tape, p, cat, enc.schedule[n], phi)?;
        }
        let logits = native_conv(tape, h, p.var(self.head_w), p.var(self.head_b), enc.schedule[0])?;
        let all = tape.sigmoid(logits);
        let probs = tape.narrow(all, 0, 0, 1)?;

        let lo = f32::EPSILON;
        let values = tape.data(probs).iter().map(|&v| (v as f32).clamp(lo, 1.0 - lo)).collect();
        let on_net = VoxelGrid::new(enc.network_shape, values, enc.network_affine)?;
        let prob_map = if on_net.same_geometry(enc.reference_shape, &enc.reference_affine) {
            on_net
        } else {
            resample_to_geometry(&on_net, enc.reference_shape, &enc.reference_affine, Interp::Linear)?
        };
        let mask = BinaryMask::threshold(&prob_map, 0.5);
        Ok(GenOutput { probs, prob_map, mask })
    }
}

/// In-plane ×2 max-pool; the slice axis is kept, max-pooled ×2, or
/// trilinearly resampled depending on the scheduled separation.
fn downsample(tape: &mut Tape, x: Var, from: Spacing, to: Spacing) -> Result<Var, VisionError> {
    let ratio = to.sep() / from.sep();
    if ratio == 1.0 {
        return Ok(tape.max_pool(x, [2, 2, 1])?);
    }
    if ratio == 2.0 {
        return Ok(tape.max_pool(x, [2, 2, 2])?);
    }
    let pooled = tape.max_pool(x, [2, 2, 1])?;
    let s = tape.shape(pooled);
    let nz = ((s[4] as f64 / ratio) - 1e-9).ceil().max(1.0) as usize;
    Ok(tape.resize(pooled, [s[2], s[3], nz], [1.0, 1.0, ratio])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (VisionNet, ParamStore) {
        let mut store = ParamStore::new();
        let net = VisionNet::new(NetConfig::desk(), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (net, store)
    }

    fn volume(shape: [usize; 3], spacing: [f64; 3], seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        VoxelGrid::new(shape, (0..n).map(|_| rng.random::<f32>()).collect(), Affine::from_spacing(spacing, [0.0; 3])).unwrap()
    }

    fn phis(tape: &mut Tape, n: usize, dim: usize) -> Vec<Var> {
        (0..n).map(|i| tape.constant(Tensor::new(vec![1, dim], (0..dim).map(|j| ((i * dim + j) as f64 * 0.37).sin()).collect()).unwrap())).collect()
    }

    #[test]
    fn level_shapes_halve() {
        let (net, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let v = volume([16, 16, 16], [1.0; 3], 0);
        let phi = phis(&mut tape, 1, 8);
        let enc = net.encode(&mut tape, &p, &[v], &phi).unwrap();
        let spatial: Vec<Vec<usize>> = enc.levels.iter().map(|&l| tape.shape(l)[2..].to_vec()).collect();
        assert_eq!(spatial, [vec![16, 16, 16], vec![8, 8, 8], vec![4, 4, 4], vec![2, 2, 2]]);
        assert_eq!(tape.shape(enc.pooled), [1, 64]);
    }

    #[test]
    fn anisotropic_schedule_shapes() {
        let (net, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let v = volume([16, 16, 6], [1.0, 1.0, 6.0], 0);
        let phi = phis(&mut tape, 1, 8);
        let enc = net.encode(&mut tape, &p, &[v], &phi).unwrap();
        let spatial: Vec<Vec<usize>> = enc.levels.iter().map(|&l| tape.shape(l)[2..].to_vec()).collect();
        // slice axis: 6 mm kept twice, then 6 → 8 mm
        assert_eq!(spatial, [vec![16, 16, 6], vec![8, 8, 6], vec![4, 4, 6], vec![2, 2, 5]]);
        let out = net.generate(&mut tape, &p, &enc, &phi).unwrap();
        assert_eq!(out.prob_map.shape(), [16, 16, 6]);
    }

    #[test]
    fn output_on_reference_geometry_and_open_interval() {
        let (net, store) = setup();
        for s in 1..=4 {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let vols: Vec<_> = (0..s).map(|i| volume([8, 8, 4], [1.0, 1.0, 2.0], i as u64)).collect();
            let phi = phis(&mut tape, s, 8);
            let enc = net.encode(&mut tape, &p, &vols, &phi).unwrap();
            assert_eq!(enc.streams, s);
            assert_eq!(tape.shape(enc.pooled), [s, 64]);
            let out = net.generate(&mut tape, &p, &enc, &phi[..1]).unwrap();
            assert!(out.prob_map.same_geometry(vols[0].shape(), vols[0].affine()));
            assert!(out.prob_map.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn contract_errors() {
        let (net, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        assert!(matches!(net.encode(&mut tape, &p, &[], &[]), Err(VisionError::NoVolumes)));
        let v = volume([4, 4, 4], [1.0; 3], 0);
        let phi = phis(&mut tape, 2, 8);
        assert!(matches!(net.encode(&mut tape, &p, &[v], &phi), Err(VisionError::PhiCount { expected: 1, got: 2 })));
    }
}
