use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -mean * u.ln()
}

fn main() {
    for seed in [900u64, 901, 42] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t: f64 = rng.gen_range(0.5..1.5);
        let speaker = rng.gen_range(0..3);
        println!("seed {seed}: t0 {t:.3} speaker {speaker}");
        for i in 0..4 {
            let len = rand_exp(&mut rng, 6.0).clamp(2.0, 15.0);
            let end = (t + len).min(150.0);
            println!("  utt {i}: len {len:.3} end {end:.3} (end-t) {:.3}", end - t);
            if end - t < 2.0 { println!("  BREAK"); break; }
            t = end + rng.gen_range(0.5..1.5);
        }
    }
}
