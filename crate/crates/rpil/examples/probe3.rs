use std::time::Instant;

use rpil::dataset::{generate, GenerateConfig, Split, Task};
use rpil::eval::{demo_circle_poses, evaluate_regression, rollout_learned};
use rpil::nn::{train, NetworkSpec, TrainConfig, Variant};
use rpil::sim::{build_horseshoe, RunConfig, WorldVariant};

fn main() {
    let world = WorldVariant::Polychromatic;
    let gen = GenerateConfig {
        n_runs: 200,
        seed: 7,
        task: Task::FixedGoal,
        world,
        run: RunConfig::default(),
        control: Default::default(),
    };
    let ds = generate(&gen).unwrap();
    let goal = rpil::dataset::task1_goal();
    let starts = demo_circle_poses(9, 1.5, &goal);
    let wspec = build_horseshoe(world);
    let roll_cfg = RunConfig { max_steps: 600, ..RunConfig::default() };

    let candidates: Vec<(&str, TrainConfig)> = vec![
        (
            "A b256 p10 e500",
            TrainConfig {
                batch_size: 256,
                patience: 10,
                max_epochs: 500,
                seed: 0,
                ..TrainConfig::default()
            },
        ),
        (
            "B b128 e30",
            TrainConfig {
                batch_size: 128,
                patience: 30,
                max_epochs: 30,
                seed: 0,
                ..TrainConfig::default()
            },
        ),
        (
            "C b128 e50",
            TrainConfig {
                batch_size: 128,
                patience: 50,
                max_epochs: 50,
                seed: 0,
                ..TrainConfig::default()
            },
        ),
        (
            "D b128 e90",
            TrainConfig {
                batch_size: 128,
                patience: 90,
                max_epochs: 90,
                seed: 0,
                ..TrainConfig::default()
            },
        ),
    ];

    for (label, cfg) in candidates {
        let t0 = Instant::now();
        let (net, hist) =
            train(&ds, NetworkSpec::full(Variant::MaxpoolDropout), &cfg).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let rep = evaluate_regression(&net, &ds, Split::Val, gen.run.axle).unwrap();
        println!(
            "{label}: {secs:.0}s {} epochs (best {}) val_mse {:.5} r2 lin {:.3} ang {:.3}",
            hist.epochs(),
            hist.best_epoch,
            hist.val_loss[hist.best_epoch - 1],
            rep.r2_linear,
            rep.r2_angular,
        );
        let report = rollout_learned(&net, &wspec, &starts, &goal, &roll_cfg).unwrap();
        let mut w200 = 0;
        let mut w300 = 0;
        let mut w600 = 0;
        for (i, r) in report.runs.iter().enumerate() {
            let (mut best, mut best_step) = (f64::INFINITY, 0usize);
            for (s, &d) in r.distance.iter().enumerate() {
                if d < best {
                    best = d;
                    best_step = s;
                }
            }
            let min200 =
                r.distance.iter().take(201).cloned().fold(f64::INFINITY, f64::min);
            let min300 =
                r.distance.iter().take(301).cloned().fold(f64::INFINITY, f64::min);
            if min200 <= 0.10 {
                w200 += 1;
            }
            if min300 <= 0.10 {
                w300 += 1;
            }
            if best <= 0.10 {
                w600 += 1;
            }
            println!(
                "  pose {i}: min {:5.1}cm @step {best_step:3} final {:5.1}cm{}",
                best * 100.0,
                r.distance.last().unwrap() * 100.0,
                if r.collided { " COLLIDED" } else { "" },
            );
        }
        println!("  within 10cm: @200 {w200}/9 @300 {w300}/9 @600 {w600}/9");
    }
}
