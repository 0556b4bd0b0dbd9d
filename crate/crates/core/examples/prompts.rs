//! Sample prompts from the shipped grammar, a few per task kind, and check
//! that the grammar accepts what it produced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxagent::taskgen::Grammar;

fn main() {
    let g = Grammar::shipped();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    println!("{} literal alternatives", g.leaf_count());
    for kind in g.kinds() {
        println!("\n{kind}");
        for _ in 0..3 {
            let p = g.expand(kind, &[], &mut rng).expect("shipped grammar expands");
            assert!(g.accepts(kind, &p));
            println!("  {p}");
        }
    }
    println!("\nlesion targets only:");
    for _ in 0..3 {
        println!("  {}", g.expand("segment", &[("target", "lesion")], &mut rng).expect("lesion target exists"));
    }
}
