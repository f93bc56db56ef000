use peephole::generator::{generate_archs, SkeletonConfig};
use peephole::harness::{evaluate, label_dataset, train, TrainConfig};
use peephole::predictor::PeepholeHyper;

#[test]
fn probe() {
    let cfg = SkeletonConfig { rng_seed: 42, ..SkeletonConfig::default() };
    let archs = generate_archs(1000, &cfg).unwrap();
    let data = label_dataset(&archs, 60).unwrap();
    let (train_split, test_split) = data.split_at(800);
    let tc = TrainConfig { epochs: 40, lr: 0.02, lr_decay_every: 25, seed: 42, ..TrainConfig::default() };
    let (params, hist) = train(&tc, &PeepholeHyper::default(), train_split).unwrap();
    for e in &hist.epochs { println!("ep {} loss {:.6} val mse {:.6} val tau {:.4}", e.epoch, e.train_loss, e.val.mse, e.val.tau); }
    let m = evaluate(&params, test_split).unwrap();
    println!("held-out: mse {:.6} tau {:.4} r2 {:.4}", m.mse, m.tau, m.r2);
}
