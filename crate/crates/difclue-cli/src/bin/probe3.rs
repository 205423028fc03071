// Scratch hyperparameter sweep (development only).
use difclue::config::ExperimentConfig;
use difclue::experiment;

fn main() {
    for epochs in [300usize, 500] {
        for seed in [7u64, 11, 13] {
            let mut cfg = ExperimentConfig::shapes_default();
            cfg.seed = seed;
            cfg.dae.beta_max = 0.1;
            cfg.dae.z_scale = 1.0;
            cfg.dae.epochs = epochs;
            let t0 = std::time::Instant::now();
            match experiment::run_pipeline(&cfg) {
                Ok(out) => {
                    let e = &out.eval;
                    let realism_ok = e.realism.iter().all(|r| {
                        let cross = e.realism.iter()
                            .find(|o| o.cluster == r.cluster && o.class != r.class).unwrap().frechet;
                        if out.clustering.cluster_class[&r.cluster] == r.class { r.frechet < cross } else { true }
                    });
                    println!(
                        "epochs {epochs} seed {seed} ({:.0?}): recon {:.5} ari {:.2} align {:?} r {:.3} rho {:.3} subst {:.2} dist {:.2} realism_ok {realism_ok}",
                        t0.elapsed(), e.recon_mse, e.ari, e.alignment, e.importance.pearson, e.importance.spearman,
                        e.substitutability.accuracy,
                        e.distinctness.as_ref().map(|d| d.accuracy).unwrap_or(f64::NAN)
                    );
                }
                Err(err) => println!("epochs {epochs} seed {seed}: FAILED {err}"),
            }
        }
    }
}
