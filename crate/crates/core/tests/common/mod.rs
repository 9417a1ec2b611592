//! Shared helpers for the integration suites.

use progmerge::model::{rng_from_seed, Program};
use progmerge::sexpr::SExpr;
use progmerge::treedom::parse_trees;
use progmerge::Tree;
use rand::Rng;

pub fn fixture_path(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load_fixture_trees(name: &str) -> Vec<Tree> {
    let text = std::fs::read_to_string(fixture_path(name)).expect("fixture file");
    parse_trees(&text).expect("fixture parses")
}

fn literal_tree(rng: &mut impl Rng, depth: usize) -> SExpr {
    let color = [0.0, 1.0, 2.0][rng.gen_range(0..3)];
    let size = [1.0, 0.5][rng.gen_range(0..2)];
    let data = SExpr::list(vec![
        SExpr::sym("data"),
        SExpr::list(vec![SExpr::sym("color"), SExpr::real(color)]),
        SExpr::list(vec![SExpr::sym("size"), SExpr::real(size)]),
    ]);
    let n_children = if depth >= 2 { 0 } else { rng.gen_range(0..=2) };
    let mut items = vec![SExpr::sym("node"), data];
    items.extend((0..n_children).map(|_| literal_tree(rng, depth + 1)));
    SExpr::list(items)
}

fn choice_expr(rng: &mut impl Rng, depth: usize, sites: &mut usize, max_sites: usize) -> SExpr {
    if *sites >= max_sites || depth >= 2 || rng.gen_bool(0.3) {
        return literal_tree(rng, depth);
    }
    *sites += 1;
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(2..=3);
        let mut items = vec![SExpr::sym("uniform-choice")];
        items.extend((0..n).map(|_| choice_expr(rng, depth + 1, sites, max_sites)));
        SExpr::list(items)
    } else {
        let (p, q) = [(1i64, 4i64), (1, 3), (1, 2), (2, 3)][rng.gen_range(0..4)];
        SExpr::list(vec![
            SExpr::sym("if"),
            SExpr::list(vec![SExpr::sym("flip"), SExpr::ratio(p, q)]),
            choice_expr(rng, depth + 1, sites, max_sites),
            choice_expr(rng, depth + 1, sites, max_sites),
        ])
    }
}

/// A random desk-scale tree program: nested choices over literal trees, at
/// most `max_sites` choice sites, no Gaussians. Deterministic per seed.
pub fn random_desk_program(seed: u64, max_sites: usize) -> Program {
    let mut rng = rng_from_seed(seed);
    let mut sites = 0;
    let body = choice_expr(&mut rng, 0, &mut sites, max_sites);
    Program::new(
        Vec::new(),
        SExpr::list(vec![SExpr::sym("λ"), SExpr::list(vec![]), body]),
    )
}
