//! The observed-data domain: trees with color and size attributes,
//! conversion between trees and expressions, data incorporation, and a small
//! SVG renderer for eyeballing samples.

use thiserror::Error;

use crate::model::Program;
use crate::sexpr::{self, ParseError, SExpr, LAMBDA};

/// A single observation: a node with a color, a size and ordered children.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub color: f64,
    pub size: f64,
    pub children: Vec<Tree>,
}

impl Tree {
    pub fn new(color: f64, size: f64, children: Vec<Tree>) -> Tree {
        Tree { color, size, children }
    }

    pub fn leaf(color: f64, size: f64) -> Tree {
        Tree::new(color, size, Vec::new())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Tree::node_count).sum::<usize>()
    }

    /// Shape only, ignoring attribute values. Two trees with equal shape
    /// strings have the same arity structure.
    pub fn shape_string(&self) -> String {
        let children: Vec<String> = self.children.iter().map(Tree::shape_string).collect();
        format!("({})", children.join(""))
    }

    pub fn shape_eq(&self, other: &Tree) -> bool {
        self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| a.shape_eq(b))
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

/// How observed attribute values are written into the initial program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncorporationMode {
    /// Colors become `(gaussian c sd)` draws; sizes stay literal.
    GaussianColors,
    /// Both attributes stay literal.
    Deterministic,
}

/// Standard deviation used for incorporated color noise unless overridden.
pub const DEFAULT_COLOR_SD: f64 = 25.0;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("expected a literal tree expression, found `{0}`")]
    NotLiteral(String),
    #[error("malformed tree expression: expected {expected} in `{found}`")]
    Malformed { expected: &'static str, found: String },
    #[error("no trees to incorporate")]
    Empty,
}

fn malformed(expected: &'static str, found: &SExpr) -> TreeError {
    TreeError::Malformed { expected, found: found.to_string() }
}

pub fn tree_to_expression(t: &Tree, mode: IncorporationMode) -> SExpr {
    tree_to_expression_with_sd(t, mode, DEFAULT_COLOR_SD)
}

pub fn tree_to_expression_with_sd(t: &Tree, mode: IncorporationMode, sd: f64) -> SExpr {
    let color_expr = match mode {
        IncorporationMode::GaussianColors => SExpr::list(vec![
            SExpr::sym("gaussian"),
            SExpr::real(t.color),
            SExpr::real(sd),
        ]),
        IncorporationMode::Deterministic => SExpr::real(t.color),
    };
    let data = SExpr::list(vec![
        SExpr::sym("data"),
        SExpr::list(vec![SExpr::sym("color"), color_expr]),
        SExpr::list(vec![SExpr::sym("size"), SExpr::real(t.size)]),
    ]);
    let mut items = vec![SExpr::sym("node"), data];
    items.extend(t.children.iter().map(|c| tree_to_expression_with_sd(c, mode, sd)));
    SExpr::list(items)
}

/// Build the initial program: a thunk that draws uniformly from one
/// expression per observation, in order, duplicates preserved.
pub fn incorporate_data(trees: &[Tree], mode: IncorporationMode) -> Result<Program, TreeError> {
    incorporate_data_with_sd(trees, mode, DEFAULT_COLOR_SD)
}

pub fn incorporate_data_with_sd(
    trees: &[Tree],
    mode: IncorporationMode,
    sd: f64,
) -> Result<Program, TreeError> {
    if trees.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut choice = vec![SExpr::sym("uniform-choice")];
    choice.extend(trees.iter().map(|t| tree_to_expression_with_sd(t, mode, sd)));
    let body = SExpr::list(vec![
        SExpr::sym(LAMBDA),
        SExpr::list(vec![]),
        SExpr::list(choice),
    ]);
    Ok(Program::new(Vec::new(), body))
}

fn literal_number(e: &SExpr) -> Result<f64, TreeError> {
    match e.as_num() {
        Some(n) => Ok(n.value()),
        None => Err(TreeError::NotLiteral(e.to_string())),
    }
}

fn attribute(e: &SExpr, tag: &'static str) -> Result<f64, TreeError> {
    let items = e.as_list().ok_or_else(|| malformed(tag, e))?;
    if items.len() != 2 || items[0].as_sym() != Some(tag) {
        return Err(malformed(tag, e));
    }
    literal_number(&items[1])
}

/// Inverse of [`tree_to_expression`] for fully literal expressions; used to
/// load observation files.
pub fn expression_to_tree(e: &SExpr) -> Result<Tree, TreeError> {
    let items = e.as_list().ok_or_else(|| malformed("a (node ...) form", e))?;
    if items.len() < 2 || items[0].as_sym() != Some("node") {
        return Err(malformed("a (node ...) form", e));
    }
    let data = items[1].as_list().ok_or_else(|| malformed("a (data ...) form", &items[1]))?;
    if data.len() != 3 || data[0].as_sym() != Some("data") {
        return Err(malformed("a (data ...) form", &items[1]));
    }
    let color = attribute(&data[1], "color")?;
    let size = attribute(&data[2], "size")?;
    let children = items[2..].iter().map(expression_to_tree).collect::<Result<_, _>>()?;
    Ok(Tree::new(color, size, children))
}

/// Parse an observation file: one literal tree s-expression per top-level form.
pub fn parse_trees(text: &str) -> Result<Vec<Tree>, TreeError> {
    sexpr::parse_many(text)?.iter().map(expression_to_tree).collect()
}

fn hue_rgb(color: f64) -> (u8, u8, u8) {
    let c = color.clamp(0.0, 255.0);
    let h = c / 255.0 * 330.0;
    let (s, v) = (0.75f64, 0.85f64);
    let hh = h / 60.0;
    let i = hh.floor() as i32 % 6;
    let f = hh - hh.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

struct SvgNode {
    x: f64,
    depth: usize,
    color: f64,
    size: f64,
    parent: Option<usize>,
}

fn svg_layout(t: &Tree, depth: usize, parent: Option<usize>, next_leaf: &mut f64, out: &mut Vec<SvgNode>) -> usize {
    let idx = out.len();
    out.push(SvgNode { x: 0.0, depth, color: t.color, size: t.size, parent });
    if t.children.is_empty() {
        out[idx].x = *next_leaf;
        *next_leaf += 1.0;
    } else {
        let mut sum = 0.0;
        for c in &t.children {
            let ci = svg_layout(c, depth + 1, Some(idx), next_leaf, out);
            sum += out[ci].x;
        }
        out[idx].x = sum / t.children.len() as f64;
    }
    idx
}

/// Deterministic SVG rendering: one circle per node, radius proportional to
/// size, fill hue from the color clamped to [0, 255], children laid out
/// below their parents.
pub fn render_svg(t: &Tree) -> String {
    let mut nodes = Vec::new();
    let mut next_leaf = 0.0;
    svg_layout(t, 0, None, &mut next_leaf, &mut nodes);
    let leaves = next_leaf.max(1.0);
    let max_depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let width = 70.0 * leaves + 20.0;
    let height = 80.0 * (max_depth as f64 + 1.0) + 20.0;
    let pos = |n: &SvgNode| (45.0 + n.x * 70.0, 50.0 + n.depth as f64 * 80.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        width, height, width, height
    ));
    for n in &nodes {
        if let Some(pi) = n.parent {
            let (x1, y1) = pos(&nodes[pi]);
            let (x2, y2) = pos(n);
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#555\" stroke-width=\"2\"/>\n",
                x1, y1, x2, y2
            ));
        }
    }
    for n in &nodes {
        let (cx, cy) = pos(n);
        let r = (n.size.abs() * 30.0).clamp(3.0, 34.0);
        let (red, green, blue) = hue_rgb(n.color);
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"rgb({},{},{})\"/>\n",
            cx, cy, r, red, green, blue
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
