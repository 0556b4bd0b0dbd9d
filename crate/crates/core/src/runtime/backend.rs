//! Where `encode` and `segment` get their results from.

use super::value::{Encodings, MaskValue};
use crate::tensor::{BoundParams, Tape, Tensor, Var};
use crate::visionnet::VisionNet;
use crate::voxelcore::{BinaryMask, VoxelGrid};
use std::collections::VecDeque;

pub trait VisionBackend {
    fn encode(&mut self, tape: &mut Tape, volumes: &[VoxelGrid], phi: &[Var]) -> Result<Encodings, String>;
    fn segment(&mut self, tape: &mut Tape, enc: &Encodings, phi: &[Var]) -> Result<MaskValue, String>;
}

/// The vision networks, for inference.
pub struct NetworkBackend<'a> {
    pub net: &'a VisionNet,
    pub params: &'a BoundParams,
}

fn net_encode(net: &VisionNet, params: &BoundParams, tape: &mut Tape, volumes: &[VoxelGrid], phi: &[Var]) -> Result<Encodings, String> {
    let set = net.encode(tape, params, volumes, phi).map_err(|e| e.to_string())?;
    let pooled = (0..set.streams).map(|s| tape.narrow(set.pooled, 0, s, 1)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (reference_shape, reference_affine) = set.reference_geometry();
    Ok(Encodings { pooled, set: Some(set), reference_shape, reference_affine })
}

impl VisionBackend for NetworkBackend<'_> {
    fn encode(&mut self, tape: &mut Tape, volumes: &[VoxelGrid], phi: &[Var]) -> Result<Encodings, String> {
        net_encode(self.net, self.params, tape, volumes, phi)
    }

    fn segment(&mut self, tape: &mut Tape, enc: &Encodings, phi: &[Var]) -> Result<MaskValue, String> {
        let set = enc.set.as_ref().ok_or("encodings carry no features")?;
        let out = self.net.generate(tape, self.params, set, phi).map_err(|e| e.to_string())?;
        Ok(MaskValue { mask: out.mask, probs: Some(out.probs) })
    }
}

fn next_mask(queue: &mut VecDeque<BinaryMask>, enc: &Encodings) -> Result<BinaryMask, String> {
    let m = queue.pop_front().ok_or("no oracle mask left for segment")?;
    if m.shape() != enc.reference_shape || m.affine() != enc.reference_affine {
        return Err("oracle mask geometry does not match the encoded volume".into());
    }
    Ok(m)
}

/// No networks: encodings are zero vectors and `segment` returns queued
/// ground-truth masks in call order.
pub struct OracleBackend {
    width: usize,
    masks: VecDeque<BinaryMask>,
}

impl OracleBackend {
    pub fn new(width: usize, masks: Vec<BinaryMask>) -> Self {
        OracleBackend { width, masks: masks.into() }
    }
}

impl VisionBackend for OracleBackend {
    fn encode(&mut self, tape: &mut Tape, volumes: &[VoxelGrid], _phi: &[Var]) -> Result<Encodings, String> {
        let first = volumes.first().ok_or("encode needs at least one volume")?;
        let pooled = volumes.iter().map(|_| tape.constant(Tensor::zeros(&[1, self.width]))).collect();
        Ok(Encodings { pooled, set: None, reference_shape: first.shape(), reference_affine: *first.affine() })
    }

    fn segment(&mut self, _tape: &mut Tape, enc: &Encodings, _phi: &[Var]) -> Result<MaskValue, String> {
        Ok(MaskValue { mask: next_mask(&mut self.masks, enc)?, probs: None })
    }
}

/// Training: the networks run on the tape so ε° and the generator output
/// stay differentiable, while the environment receives ground-truth masks.
pub struct TeacherBackend<'a> {
    pub net: &'a VisionNet,
    pub params: &'a BoundParams,
    masks: VecDeque<BinaryMask>,
    /// Generator probabilities and their network-grid targets.
    pub generated: Vec<(Var, Vec<f64>)>,
}

impl<'a> TeacherBackend<'a> {
    pub fn new(net: &'a VisionNet, params: &'a BoundParams, masks: Vec<BinaryMask>) -> Self {
        TeacherBackend { net, params, masks: masks.into(), generated: Vec::new() }
    }
}

impl VisionBackend for TeacherBackend<'_> {
    fn encode(&mut self, tape: &mut Tape, volumes: &[VoxelGrid], phi: &[Var]) -> Result<Encodings, String> {
        net_encode(self.net, self.params, tape, volumes, phi)
    }

    fn segment(&mut self, tape: &mut Tape, enc: &Encodings, phi: &[Var]) -> Result<MaskValue, String> {
        let set = enc.set.as_ref().ok_or("encodings carry no features")?;
        let target = next_mask(&mut self.masks, enc)?;
        let out = self.net.generate(tape, self.params, set, phi).map_err(|e| e.to_string())?;
        let values = set.target_on_network_grid(&target).map_err(|e| e.to_string())?;
        self.generated.push((out.probs, values));
        Ok(MaskValue { mask: target, probs: Some(out.probs) })
    }
}
