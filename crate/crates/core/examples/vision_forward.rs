//! One encode and one generate pass of the desk-scale vision network on a
//! phantom, with timing and the soft Dice against a structure mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use voxagent::taskgen::{synth_phantom, Contrast, PhantomSpec, Structure};
use voxagent::tensor::{ParamStore, Tape, Tensor};
use voxagent::visionnet::{NetConfig, VisionNet};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ph = synth_phantom(&PhantomSpec::standard([24; 3], [1.0; 3], vec![Contrast::T1], 0.03), &mut rng).expect("valid phantom spec");
    let mut store = ParamStore::default();
    let cfg = NetConfig::desk();
    let net = VisionNet::new(cfg, &mut store, &mut rng).expect("desk config is valid");
    println!("{} parameters", store.num_scalars());
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let phi = vec![tape.constant(Tensor::zeros(&[1, cfg.phi_dim]))];
    let t0 = Instant::now();
    let enc = net.encode(&mut tape, &p, &[ph.grid_like().clone()], &phi).expect("encode");
    let t1 = Instant::now();
    let out = net.generate(&mut tape, &p, &enc, &phi).expect("generate");
    println!("encode {:.1?}, generate {:.1?}", t1 - t0, t1.elapsed());
    let target = enc.target_on_network_grid(&ph.structure_mask(Structure::Ventricles)).expect("target resamples");
    let probs = tape.data(out.probs);
    let inter: f64 = probs.iter().zip(&target).map(|(p, t)| p * t).sum();
    let dice = 2.0 * inter / (probs.iter().sum::<f64>() + target.iter().sum::<f64>());
    println!("soft Dice against the ventricles, untrained: {dice:.3}");
}
