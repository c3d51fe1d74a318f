//! SPG's extractor should probe at least as well after the whole dissimilar
//! stream as after its first task, in most seeds.

use std::path::Path;

use spg::commands::cmd_probe;
use spg::config::RunConfig;
use spg_core::trainer::Method;

#[test]
fn spg_representation_improves_over_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/dissimilar.json");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.methods = vec![Method::Spg];
    cfg.out_dir = dir.path().to_path_buf();
    let rows = cmd_probe(&cfg).unwrap();
    let t = cfg.stream.build(0).unwrap().len();
    let mut improved = 0;
    for &seed in &cfg.seeds {
        let at = |k: usize| rows.iter().find(|r| r.seed == seed && r.tasks_learned == k).unwrap().probe_accuracy;
        println!("seed {seed}: after 1 task {:.3}, after {t} tasks {:.3}", at(1), at(t));
        improved += usize::from(at(t) >= at(1));
    }
    assert!(improved >= 3, "only {improved}/5 seeds improved");
}
