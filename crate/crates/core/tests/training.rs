use prefopt_core::exact::{exact_point_at_kl, frontier_point, optimal_policy, project_reward};
use prefopt_core::objectives::implicit_reward;
use prefopt_core::taskgen::{enumerate_soft_dataset, gen_instance, sample_pairs};
use prefopt_core::train::{
    fit_reward_model, rm_then_rl, train, train_reinforce, DataMode, LrScale, Method, Optimizer, TrainConfig,
};
use prefopt_core::Instance;

const BETAS: [f64; 4] = [0.05, 0.1, 1.0, 5.0];

fn soft_cfg(method: Method, beta: f64, steps: usize) -> TrainConfig {
    TrainConfig {
        method,
        beta,
        lr: 0.5,
        steps,
        warmup_steps: 0,
        eval_every: steps,
        ..TrainConfig::default()
    }
}

fn instances(n: u64) -> Vec<Instance> {
    (0..n)
        .map(|s| gen_instance(4, 5, 1.0, 1.0, 1000 + s).unwrap())
        .collect()
}

#[test]
fn soft_dpo_reaches_the_gibbs_policy() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        for beta in BETAS {
            let trace = train(&inst, &ds, &soft_cfg(Method::Dpo, beta, 5000)).unwrap();
            let target = optimal_policy(inst.reward_true(), inst.pi_ref(), beta).unwrap();
            let tv = trace.final_policy().max_tv(&target);
            assert!(tv <= 1e-3, "β={beta}: tv {tv:e}");
        }
    }
}

#[test]
fn small_step_dpo_loss_never_increases_after_warmup() {
    for inst in instances(3) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        let cfg = TrainConfig {
            lr: 0.1,
            warmup_steps: 20,
            eval_every: 1,
            ..soft_cfg(Method::Dpo, 0.1, 300)
        };
        let trace = train(&inst, &ds, &cfg).unwrap();
        for pair in trace.records[cfg.warmup_steps..].windows(2) {
            assert!(
                pair[1].loss <= pair[0].loss,
                "step {}: {} > {}",
                pair[1].step,
                pair[1].loss,
                pair[0].loss
            );
        }
    }
}

#[test]
fn implicit_reward_recovers_projected_truth() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        for beta in BETAS {
            let trace = train(&inst, &ds, &soft_cfg(Method::Dpo, beta, 5000)).unwrap();
            let rhat = implicit_reward(&trace.policy, inst.pi_ref(), beta).unwrap();
            let a = project_reward(&rhat, inst.pi_ref(), beta).unwrap();
            let b = project_reward(inst.reward_true(), inst.pi_ref(), beta).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-3, "β={beta}: {:e}", a.max_abs_diff(&b));
        }
    }
}

#[test]
fn reward_model_recovers_truth_up_to_shift() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        let cfg = soft_cfg(Method::RmThenRl, 1.0, 3000);
        let phi = fit_reward_model(&inst, &ds, &cfg).unwrap();
        let a = project_reward(&phi.values, inst.pi_ref(), 1.0).unwrap();
        let b = project_reward(inst.reward_true(), inst.pi_ref(), 1.0).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-3);
    }
}

#[test]
fn reward_model_without_signal_is_flat() {
    let inst = gen_instance(3, 4, 0.0, 1.0, 4).unwrap();
    let ds = enumerate_soft_dataset(&inst).unwrap();
    let phi = fit_reward_model(&inst, &ds, &soft_cfg(Method::RmThenRl, 1.0, 500)).unwrap();
    let proj = project_reward(&phi.values, inst.pi_ref(), 1.0).unwrap();
    assert!(proj.values().iter().all(|v| v.abs() <= 1e-6));
}

#[test]
fn sampled_reward_model_is_statistically_close() {
    let inst = gen_instance(3, 4, 1.0, 1.0, 5).unwrap();
    let ds = sample_pairs(&inst, inst.pi_ref(), 100_000, 6).unwrap();
    let cfg = TrainConfig {
        mode: DataMode::Sampled,
        ..soft_cfg(Method::RmThenRl, 1.0, 5000)
    };
    let phi = fit_reward_model(&inst, &ds, &cfg).unwrap();
    let a = project_reward(&phi.values, inst.pi_ref(), 1.0).unwrap();
    let b = project_reward(inst.reward_true(), inst.pi_ref(), 1.0).unwrap();
    assert!(a.max_abs_diff(&b) <= 0.05, "{}", a.max_abs_diff(&b));
}

#[test]
fn reward_pipeline_agrees_with_dpo() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        for beta in BETAS {
            let dpo = train(&inst, &ds, &soft_cfg(Method::Dpo, beta, 5000)).unwrap();
            let rl = rm_then_rl(&inst, &ds, &soft_cfg(Method::RmThenRl, beta, 5000)).unwrap();
            let tv = dpo.final_policy().max_tv(&rl.final_policy());
            assert!(tv <= 2e-3, "β={beta}: {tv:e}");
        }
    }
}

#[test]
fn pipeline_kl_shrinks_as_beta_grows() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        let kls: Vec<f64> = BETAS
            .iter()
            .map(|&b| {
                *rm_then_rl(&inst, &ds, &soft_cfg(Method::RmThenRl, b, 3000))
                    .unwrap()
                    .records
                    .last()
                    .map(|r| &r.kl)
                    .unwrap()
            })
            .collect();
        assert!(kls.windows(2).all(|w| w[1] <= w[0]), "{kls:?}");
    }
}

#[test]
fn natural_reinforce_reaches_the_gibbs_policy() {
    for inst in instances(5) {
        for beta in BETAS {
            let cfg = TrainConfig {
                optimizer: Optimizer::Natural,
                ..soft_cfg(Method::Reinforce, beta, 200)
            };
            let trace = train_reinforce(&inst, inst.reward_true(), &cfg).unwrap();
            let target = optimal_policy(inst.reward_true(), inst.pi_ref(), beta).unwrap();
            assert!(trace.final_policy().max_tv(&target) <= 1e-3);
        }
    }
}

#[test]
fn vanilla_reinforce_converges_at_moderate_beta() {
    for inst in instances(3) {
        let cfg = TrainConfig {
            lr: 1.0,
            ..soft_cfg(Method::Reinforce, 1.0, 5000)
        };
        let trace = train_reinforce(&inst, inst.reward_true(), &cfg).unwrap();
        let target = optimal_policy(inst.reward_true(), inst.pi_ref(), 1.0).unwrap();
        assert!(trace.final_policy().max_tv(&target) <= 1e-3);
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let inst = gen_instance(3, 4, 1.0, 1.0, 7).unwrap();
    let pairs = sample_pairs(&inst, inst.pi_ref(), 500, 8).unwrap();
    for (method, optimizer) in [
        (Method::Dpo, Optimizer::Sgd),
        (Method::Dpo, Optimizer::RmsProp),
        (Method::Reinforce, Optimizer::Natural),
    ] {
        let cfg = TrainConfig {
            method,
            optimizer,
            mode: DataMode::Sampled,
            lr: if optimizer == Optimizer::RmsProp { 1e-2 } else { 0.5 },
            lr_scale: LrScale::InverseSmoothness,
            steps: 200,
            warmup_steps: 20,
            eval_every: 10,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train(&inst, &pairs, &cfg).unwrap();
        let b = train(&inst, &pairs, &cfg).unwrap();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn dpo_frontier_tracks_the_exact_frontier() {
    for inst in instances(5) {
        let ds = enumerate_soft_dataset(&inst).unwrap();
        for beta in BETAS {
            let trace = train(&inst, &ds, &soft_cfg(Method::Dpo, beta, 5000)).unwrap();
            let got = frontier_point(&trace.final_policy(), &inst, Some(beta), "dpo").unwrap();
            let star = optimal_policy(inst.reward_true(), inst.pi_ref(), beta).unwrap();
            let want = frontier_point(&star, &inst, Some(beta), "exact").unwrap();
            assert!((got.kl - want.kl).abs() <= 1e-2 && (got.expected_reward - want.expected_reward).abs() <= 1e-2);
        }
    }
}

#[test]
fn unlikelihood_is_dominated_by_the_exact_frontier() {
    let insts = instances(10);
    let mut dominated = 0;
    for (i, inst) in insts.iter().enumerate() {
        let pairs = sample_pairs(inst, inst.pi_ref(), 1000, 50 + i as u64).unwrap();
        let cfg = TrainConfig {
            alpha: 1.0,
            mode: DataMode::Sampled,
            ..soft_cfg(Method::Unlikelihood, 0.1, 2000)
        };
        let trace = train(inst, &pairs, &cfg).unwrap();
        let ul = frontier_point(&trace.final_policy(), inst, None, "unlikelihood").unwrap();
        let exact = exact_point_at_kl(inst, ul.kl).unwrap();
        dominated += usize::from(ul.expected_reward < exact.expected_reward && exact.kl <= ul.kl);
    }
    assert!(dominated * 10 >= insts.len() * 8, "{dominated}/{}", insts.len());
}
