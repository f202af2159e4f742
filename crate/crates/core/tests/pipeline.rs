use crysgen::corpus::{synthetic_perovskites, CorpusConfig};
use crysgen::denoiser::{init_params, DenoiserConfig};
use crysgen::diffusion::{make_schedules, LatticeNorm};
use crysgen::metrics::{coverage, fingerprint, structure_match, MatchTolerances};
use crysgen::proposer::FileProposer;
use crysgen::sampler::{generate_batch, SamplerConfig};
use crysgen::text::{build_prompt, parse, serialize, PromptKind};
use crysgen::trainer::batch_gradient;
use crysgen::{Crystal, Execution};

const SMALL: DenoiserConfig = DenoiserConfig {
    hidden: 16,
    layers: 2,
    n_freq: 4,
};

fn corpus(n: usize, seed: u64) -> Vec<Crystal> {
    synthetic_perovskites(&CorpusConfig {
        size: n,
        seed,
        ..CorpusConfig::default()
    })
    .unwrap()
}

#[test]
fn corpus_survives_text_round_trip() {
    let tol = MatchTolerances::default();
    for c in corpus(40, 4) {
        let back = parse(&serialize(&c)).unwrap();
        assert!(structure_match(&c, &back, &tol).is_some());
    }
}

#[test]
fn gradient_is_independent_of_execution() {
    let set = corpus(12, 5);
    let batch: Vec<&Crystal> = set.iter().collect();
    let params = init_params(0, SMALL).unwrap();
    let sched = make_schedules(1000, 0.005, 0.6).unwrap();
    let lattices: Vec<_> = set.iter().map(|x| *x.lattice()).collect();
    let norm = LatticeNorm::fit(&lattices);
    let (ls, gs) = batch_gradient(&params, &sched, &norm, &batch, 3, 7, Execution::Sequential).unwrap();
    let (lp, gp) = batch_gradient(&params, &sched, &norm, &batch, 3, 7, Execution::Parallel).unwrap();
    assert_eq!(ls, lp);
    assert_eq!(gs.flatten(), gp.flatten());
}

#[test]
fn batch_generation_is_independent_of_execution() {
    let set = corpus(8, 6);
    let lattices: Vec<_> = set.iter().map(|x| *x.lattice()).collect();
    let norm = LatticeNorm::fit(&lattices);
    let proposer = FileProposer::new(set, 4, "test").unwrap();
    let params = init_params(1, SMALL).unwrap();
    let sched = make_schedules(1000, 0.005, 0.6).unwrap();
    let prompt = build_prompt(PromptKind::Unconditional).unwrap();
    let cfg = SamplerConfig {
        tau: Some(3),
        ..SamplerConfig::default()
    };
    let run = |exec| generate_batch(&prompt, 8, &proposer, &params, &sched, &norm, &cfg, exec).unwrap();
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.items, b.items);
    assert_eq!(a.items.len() + a.report.failures.len(), 8);
}

#[test]
fn coverage_of_a_set_against_itself_is_full() {
    let fps: Vec<Vec<f64>> = corpus(30, 9).iter().map(fingerprint).collect();
    let (recall, precision) = coverage(&fps, &fps, 1e-9, Execution::Parallel).unwrap();
    assert_eq!((recall, precision), (100.0, 100.0));
}
