// temporary calibration probe (not part of the deliverable)
use anchor_bnn::nn::{NetworkSpec, ParamVector};
use anchor_bnn::prior::{lhs_standard_normal, FunctionalPrior};
use anchor_bnn::seed::Seed;
use anchor_bnn::transfer::{pretrain_member, PretrainConfig};
use std::time::Instant;

fn main() {
    let spec = NetworkSpec::with_default_slope(1, vec![50, 50, 50, 50], 1).unwrap();
    for (name, l, epochs) in [("A", 0.8, 100usize), ("B", 0.2, 200), ("C", 0.05, 2000)] {
        let prior = FunctionalPrior::one_d(2.0, 0.0, 0.6, l);
        let points = lhs_standard_normal(500, 1, Seed::new(1)).unwrap();
        let r = prior.sample_realization(&points, Seed::new(2)).unwrap();
        let std = r.values_std();
        for lr in [3e-3, 1e-2] {
            let cfg = PretrainConfig { epochs, lr, final_lr_fraction: 0.05, points: 500, shared_points: false, batch_size: 32 };
            let omega = ParamVector::he_init(&spec, Seed::new(3));
            let t0 = Instant::now();
            let m = pretrain_member(&omega, &r, &cfg, Seed::new(4)).unwrap();
            println!("prior {name} L={l} epochs={epochs} lr={lr:.0e}: rmse={:.4} target={:.4} ok={} ({:.2?})",
                m.fit_rmse, 0.02 * std, m.fit_rmse < 0.02 * std, t0.elapsed());
        }
    }
    // reduced scale used by the prior-study acceptance criterion
    let spec2 = NetworkSpec::with_default_slope(1, vec![20, 20], 1).unwrap();
    for (name, l, epochs) in [("A", 0.8, 100usize), ("B", 0.2, 200), ("C", 0.05, 2000)] {
        let prior = FunctionalPrior::one_d(2.0, 0.0, 0.6, l);
        let points = lhs_standard_normal(500, 1, Seed::new(5)).unwrap();
        let r = prior.sample_realization(&points, Seed::new(6)).unwrap();
        let cfg = PretrainConfig { epochs, lr: 1e-2, final_lr_fraction: 0.05, points: 500, shared_points: false, batch_size: 32 };
        let omega = ParamVector::he_init(&spec2, Seed::new(7));
        let t0 = Instant::now();
        let m = pretrain_member(&omega, &r, &cfg, Seed::new(8)).unwrap();
        println!("small 2x20 prior {name}: rmse={:.4} std={:.4} ({:.2?})", m.fit_rmse, r.values_std(), t0.elapsed());
    }
}
