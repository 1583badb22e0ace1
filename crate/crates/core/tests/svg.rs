use std::collections::HashMap;

use ndarray::Array2;
use topic_align::lda::TopicModel;
use topic_align::report::{analyze, AlignmentDocument};
use topic_align::svg::{render_flow, COLUMN_BUDGET};
use topic_align::{LdaHyperparams, Method, ModelEnsemble};

#[derive(Debug)]
struct Rect {
    model: usize,
    topic: usize,
    path: usize,
    y: f64,
    height: f64,
    fill: String,
}

fn parse(svg: &str) -> (Vec<Rect>, Vec<(usize, usize)>) {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    let root = doc.root_element();
    assert_eq!(root.attribute("viewBox"), Some("0 0 1000 600"));
    let num = |n: &roxmltree::Node, a: &str| n.attribute(a).unwrap().parse::<f64>().unwrap();
    let int = |n: &roxmltree::Node, a: &str| n.attribute(a).unwrap().parse::<usize>().unwrap();
    let mut rects = Vec::new();
    let mut links = Vec::new();
    for n in root.descendants() {
        match (n.tag_name().name(), n.attribute("class")) {
            ("rect", Some("topic")) => rects.push(Rect {
                model: int(&n, "data-model"),
                topic: int(&n, "data-topic"),
                path: int(&n, "data-path"),
                y: num(&n, "y"),
                height: num(&n, "height"),
                fill: n.attribute("fill").unwrap().to_owned(),
            }),
            ("path", Some("link")) => links.push((int(&n, "data-source"), int(&n, "data-target"))),
            _ => {}
        }
    }
    (rects, links)
}

fn model(gamma: Array2<f64>, d: usize) -> TopicModel {
    let k = gamma.ncols();
    let mut beta = Array2::zeros((d, k));
    for j in 0..k {
        beta[[j % d, j]] = 0.6;
        beta[[(j + 1) % d, j]] += 0.4;
    }
    TopicModel { hyper: LdaHyperparams::new(k, 0.5, 0.1).unwrap(), beta, gamma, log_likelihood_trace: vec![] }
}

/// Hard memberships: sample i belongs to cluster `labels[i]`.
fn hard(labels: &[usize], k: usize) -> Array2<f64> {
    let mut g = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        g[[i, l]] = 1.0;
    }
    g
}

#[test]
fn diagonal_pair_draws_parallel_links() {
    let labels = [0, 0, 0, 1, 1, 2, 2, 2, 2, 2];
    // The finer model sees the same clusters under permuted labels plus an empty topic.
    let relabel = [2, 0, 3];
    let fine: Vec<usize> = labels.iter().map(|&l| relabel[l]).collect();
    let ens = ModelEnsemble::new(vec![model(hard(&labels, 3), 6), model(hard(&fine, 4), 6)], String::new()).unwrap();
    let analysis = analyze(&ens, Method::Product).unwrap();
    let doc = AlignmentDocument::new(&ens, &analysis);
    assert!(doc.reorder.objective_after < doc.reorder.objective_before);
    let svg = render_flow(&doc);
    let (rects, links) = parse(&svg);

    let columns: std::collections::BTreeSet<usize> = rects.iter().map(|r| r.model).collect();
    assert_eq!(columns.len(), 2);
    assert_eq!(links.len(), 3);
    let y = |m: usize, t: usize| rects.iter().find(|r| r.model == m && r.topic == t).unwrap().y;
    for (a, b) in &links {
        for (c, e) in &links {
            let left = y(0, *a).total_cmp(&y(0, *c));
            let right = y(1, *b).total_cmp(&y(1, *e));
            assert_eq!(left, right, "links ({a},{b}) and ({c},{e}) cross");
        }
    }
}

#[test]
fn heights_track_masses_and_colors_track_paths() {
    let mut labels = Vec::new();
    for (l, count) in [(0, 7), (1, 2), (2, 11), (3, 5)] {
        labels.extend(std::iter::repeat_n(l, count));
    }
    let n = labels.len();
    let coarse: Vec<usize> = labels.iter().map(|&l| l / 2).collect();
    let soft = {
        let mut g = Array2::from_elem((n, 3), 0.1);
        for (i, &l) in labels.iter().enumerate() {
            g[[i, l % 3]] = 0.8;
        }
        g
    };
    let ens = ModelEnsemble::new(
        vec![model(hard(&coarse, 2), 6), model(soft, 6), model(hard(&labels, 4), 6)],
        String::new(),
    )
    .unwrap();
    let doc = AlignmentDocument::new(&ens, &analyze(&ens, Method::Product).unwrap());
    let (rects, _) = parse(&render_flow(&doc));
    assert_eq!(rects.len(), 2 + 3 + 4);

    for m in 0..3 {
        let col: Vec<&Rect> = rects.iter().filter(|r| r.model == m).collect();
        let total: f64 = col.iter().map(|r| r.height).sum();
        assert!((total - COLUMN_BUDGET).abs() <= col.len() as f64, "column {m} totals {total}");
        let mass_total: f64 = doc.node_scores(m).map(|n| n.mass).sum();
        for r in &col {
            let node = doc.node_scores(m).find(|n| n.index == r.topic).unwrap();
            let expected = node.mass / mass_total * COLUMN_BUDGET;
            assert!((r.height - expected).abs() <= 1.0, "model {m} topic {}: {} vs {expected}", r.topic, r.height);
            assert_eq!(r.path, node.path);
        }
    }

    let mut fill_of: HashMap<usize, &str> = HashMap::new();
    for r in &rects {
        let previous = fill_of.entry(r.path).or_insert(&r.fill);
        assert_eq!(*previous, r.fill, "path {} has two colors", r.path);
    }
    let distinct: std::collections::HashSet<&&str> = fill_of.values().collect();
    assert_eq!(distinct.len(), fill_of.len());
}
