use rpil::dataset::{generate, GenerateConfig, Task};
use rpil::nn::{train, NetworkSpec, TrainConfig, Variant};
use rpil::sim::{RunConfig, WorldVariant};

fn main() {
    let gen = GenerateConfig {
        n_runs: 20,
        seed: 7,
        task: Task::FixedGoal,
        world: WorldVariant::Monochromatic,
        run: RunConfig::default(),
        control: Default::default(),
    };
    let ds = generate(&gen).unwrap();
    println!("samples {}", ds.n_samples());
    let cfg = TrainConfig {
        batch_size: 256,
        patience: 50,
        max_epochs: 50,
        seed: 0,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (_, hist) = train(&ds, NetworkSpec::full(Variant::MaxpoolDropout), &cfg).unwrap();
    println!("{:.1}s for {} epochs", t0.elapsed().as_secs_f64(), hist.epochs());
    let e1 = hist.val_loss[0];
    for (i, v) in hist.val_loss.iter().enumerate() {
        println!("epoch {:2} val {v:.5} ratio {:.3}", i + 1, v / e1);
    }
}
