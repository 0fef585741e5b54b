use std::time::Instant;

use rpil::dataset::{generate, GenerateConfig, Split, Task};
use rpil::eval::{demo_circle_poses, evaluate_regression, rollout_learned};
use rpil::nn::{train, NetworkSpec, TrainConfig, Variant};
use rpil::sim::{build_horseshoe, RunConfig, WorldVariant};

fn main() {
    for world in [WorldVariant::Monochromatic, WorldVariant::Polychromatic] {
        let gen = GenerateConfig {
            n_runs: 200,
            seed: 7,
            task: Task::FixedGoal,
            world,
            run: RunConfig::default(),
            control: Default::default(),
        };
        let ds = generate(&gen).unwrap();
        let cfg = TrainConfig {
            batch_size: 128,
            patience: 30,
            max_epochs: 120,
            seed: 0,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let (net, hist) =
            train(&ds, NetworkSpec::full(Variant::MaxpoolDropout), &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let rep = evaluate_regression(&net, &ds, Split::Val, gen.run.axle).unwrap();
        println!(
            "{world:?}: {dt:.0}s {} epochs (best {}) val_mse {:.5} r2 l {:.3} r {:.3} lin {:.3} ang {:.3}",
            hist.epochs(),
            hist.best_epoch,
            hist.val_loss[hist.best_epoch - 1],
            rep.r2_left,
            rep.r2_right,
            rep.r2_linear,
            rep.r2_angular,
        );
        for (i, v) in hist.val_loss.iter().enumerate() {
            println!("  epoch {:3} val {v:.5}", i + 1);
        }
        let goal = rpil::dataset::task1_goal();
        let starts = demo_circle_poses(9, 1.5, &goal);
        let wspec = build_horseshoe(world);
        let report = rollout_learned(&net, &wspec, &starts, &goal, &gen.run).unwrap();
        let mins: Vec<f64> = report
            .runs
            .iter()
            .map(|r| r.distance.iter().cloned().fold(f64::INFINITY, f64::min))
            .collect();
        let within = mins.iter().filter(|&&d| d <= 0.10).count();
        print!("  rollout min-dist:");
        for m in &mins {
            print!(" {:.0}cm", m * 100.0);
        }
        println!(" within 10cm: {within}/9");
    }
}
