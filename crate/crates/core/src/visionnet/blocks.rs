use crate::tensor::{Result, Tape, Var};
use crate::voxelcore::Spacing;

/// Convolution that respects slice anisotropy: beyond ω = 2 each slice is
/// convolved in 2D with the central through-plane kernel slice, otherwise a
/// full 3³ convolution is used. `w` is `[O, C, 3, 3, 3]` either way.
pub fn native_conv(tape: &mut Tape, x: Var, w: Var, b: Var, spacing: Spacing) -> Result<Var> {
    if spacing.omega() > 2.0 {
        tape.conv2d_slicewise(x, w, b)
    } else {
        tape.conv3d(x, w, b)
    }
}

/// Concatenate each stream's φ (broadcast over space) onto its features and
/// project back to the feature width. `a [S, C, X, Y, Z]`, `phi [S, P]`,
/// `w [C, C + P]`.
pub fn phi_mix(tape: &mut Tape, a: Var, phi: Var, w: Var, b: Var) -> Result<Var> {
    let s = tape.shape(a);
    let spatial = [s[2], s[3], s[4]];
    let pb = tape.broadcast_spatial(phi, spatial)?;
    let cat = tape.concat(&[a, pb], 1)?;
    tape.channel_linear(cat, w, Some(b))
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    /// `[b, C]` each.
    pub q: Var,
    pub k: Var,
    pub v: Var,
    /// Output projection `[C, b]` and bias `[C]`.
    pub f_w: Var,
    pub f_b: Var,
}

/// `B = f(softmax(QKᵀ / √b) V) + A`, with the softmax taken over streams
/// independently at every voxel. `a` is `[S, C, X, Y, Z]`.
pub fn stream_attention_block(tape: &mut Tape, a: Var, w: &AttentionWeights) -> Result<Var> {
    let q = tape.channel_linear(a, w.q, None)?;
    let k = tape.channel_linear(a, w.k, None)?;
    let v = tape.channel_linear(a, w.v, None)?;
    let att = tape.stream_attention(q, k, v)?;
    let f = tape.channel_linear(att, w.f_w, Some(w.f_b))?;
    tape.add(f, a)
}
