use hbdm::{auc_roc, fit, load_edge_list, make_split, score_pairs, GraphMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .ok_or("usage: link_prediction <edge-list>")?;
    let g = load_edge_list(&path, GraphMode::Undirected)?;
    let split = make_split(&g, 0.5, 1)?;
    let cfg = TrainConfig {
        dim: 2,
        iters: 1000,
        ..TrainConfig::default()
    };
    let fitted = fit(&split.train_graph, &cfg)?;
    let pos = score_pairs(&fitted.state, &split.test_edges)?;
    let neg = score_pairs(&fitted.state, &split.test_nonedges)?;
    println!("AUC-ROC {:.4}", auc_roc(&pos, &neg)?);
    Ok(())
}
