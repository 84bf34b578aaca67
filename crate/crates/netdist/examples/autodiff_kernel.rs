//! The dense NN kernel on its own: tape-based reverse-mode gradients and Adam
//! fitting a small MLP to a known function.

use netdist::nn::{adam_step, LrSchedule, Mlp, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let mlp = Mlp::init(&mut store, "fit", &[2, 16, 16, 1], &mut rng);
    let schedule = LrSchedule {
        base: 1e-2,
        ..LrSchedule::default()
    };

    let target = |x: f64, y: f64| (x * y + 0.5 * x - y).tanh();
    let batch: Vec<[f64; 2]> = (0..256)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();

    for step in 0..=1500 {
        store.zero_grads();
        let mut loss = 0.0;
        for &[x, y] in &batch {
            let mut tape = Tape::new();
            let input = tape.input(vec![x, y]);
            let out = mlp.forward(&mut tape, &store, input);
            let residual = tape.scalar(out) - target(x, y);
            loss += residual * residual;
            // d(residual^2)/d out, averaged over the batch.
            tape.backward(&mut store, out, &[2.0 * residual / batch.len() as f64]);
        }
        loss /= batch.len() as f64;
        if step % 300 == 0 {
            println!("step {step:>4}: mse {loss:.6}");
        }
        adam_step(&mut store, &schedule);
    }

    println!("\nspot checks:");
    for &[x, y] in batch.iter().take(4) {
        let mut tape = Tape::new();
        let input = tape.input(vec![x, y]);
        let out = mlp.forward(&mut tape, &store, input);
        println!(
            "  f({x:+.3}, {y:+.3}) = {:+.4}  (target {:+.4})",
            tape.scalar(out),
            target(x, y)
        );
    }
}
