//! Small built-in example datasets, shared by tests, benches and docs.

use crate::treedom::Tree;

/// The pair of tree observations used throughout the docs: a four-petal
/// structure and a slightly deeper variant.
pub fn fig2_trees() -> Vec<Tree> {
    vec![
        Tree::new(
            70.0,
            0.7,
            vec![Tree::new(
                37.0,
                0.3,
                vec![Tree::leaf(213.0, 0.3), Tree::leaf(207.0, 0.3), Tree::leaf(211.0, 0.3)],
            )],
        ),
        Tree::new(
            43.0,
            0.7,
            vec![Tree::new(
                47.0,
                0.1,
                vec![Tree::new(
                    33.0,
                    0.3,
                    vec![Tree::leaf(220.0, 0.3), Tree::leaf(224.0, 0.3), Tree::leaf(207.0, 0.3)],
                )],
            )],
        ),
    ]
}

/// Ten four-node "flower" observations (a body plus three petals), all drawn
/// around the same color.
pub fn flower_trees() -> Vec<Tree> {
    let colors: [[f64; 4]; 10] = [
        [19.7, 32.9, 2.0, 17.2],
        [27.8, 5.4, 41.3, 22.6],
        [-8.1, 30.2, 14.9, 36.5],
        [12.3, 48.7, 21.0, -3.4],
        [35.6, 18.1, 9.8, 26.4],
        [3.9, 24.5, 44.2, 15.7],
        [29.0, -12.6, 33.8, 7.1],
        [21.4, 38.0, 0.6, 45.9],
        [16.8, 11.2, 28.3, 31.7],
        [42.1, 6.9, 23.5, 13.0],
    ];
    colors
        .iter()
        .map(|c| {
            Tree::new(
                c[0],
                0.3,
                vec![Tree::leaf(c[1], 0.3), Tree::leaf(c[2], 0.3), Tree::leaf(c[3], 0.3)],
            )
        })
        .collect()
}

fn chain(colors_top_down: &[f64]) -> Tree {
    let mut t: Option<Tree> = None;
    for &c in colors_top_down.iter().rev() {
        let children = t.take().map(|child| vec![child]).unwrap_or_default();
        t = Some(Tree::new(c, 0.5, children));
    }
    t.expect("non-empty chain")
}

/// Five single-stem chains of varying length, constant color.
pub fn chain_trees() -> Vec<Tree> {
    [6usize, 9, 4, 7, 5]
        .iter()
        .map(|&len| chain(&vec![200.0; len]))
        .collect()
}

/// Ten three-node chains whose first two nodes are color 0 and whose third
/// node color varies slightly around 200.
pub fn three_node_trees() -> Vec<Tree> {
    let third: [f64; 10] =
        [209.0, 196.0, 204.5, 188.0, 211.0, 199.5, 206.0, 193.0, 201.0, 214.0];
    third
        .iter()
        .map(|&c| {
            Tree::new(
                0.0,
                0.4,
                vec![Tree::new(0.0, 0.4, vec![Tree::leaf(c, 0.4)])],
            )
        })
        .collect()
}
