//! How uncertainty weakens a distance.
//!
//! Two pairs with the same semantic distance: one certain, one where both
//! samples carry uncertainty. The uncertain pair looks closer, and its
//! gradient pushes the semantic part less.

use idml::metric::{
    grad_decay_factor, grad_introspective_distance, introspective_cosine, introspective_cosine_dis,
    introspective_distance, relative_uncertainty, semantic_distance, similarity_uncertainty,
    strict_introspective_distance, MetricParams, PairedEmbedding,
};

pub fn run_example() -> idml::Result<()> {
    let p = MetricParams::new(0.1, 1.0)?;
    let anchor = PairedEmbedding::new(vec![0.0, 0.0, 1.0], vec![0.0, 0.0])?;
    let certain = PairedEmbedding::new(vec![0.6, 0.0, 0.8], vec![0.0, 0.0])?;
    let ambiguous_anchor = PairedEmbedding::new(vec![0.0, 0.0, 1.0], vec![0.3, 0.1])?;
    let ambiguous = PairedEmbedding::new(vec![0.6, 0.0, 0.8], vec![0.2, 0.2])?;

    for (name, a, b) in [
        ("certain", &anchor, &certain),
        ("uncertain", &ambiguous_anchor, &ambiguous),
    ] {
        let g = grad_introspective_distance(a, b, &p)?;
        let pull: f64 = g.semantic_a.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "{name:>9}: alpha {:.4} beta {:.4} r {:.4} D_IN {:.4} strict {:.4} C_IN {:.4} ISM-Dis {:.4} |dD/ds| {:.4}",
            semantic_distance(a, b)?,
            similarity_uncertainty(a, b)?,
            relative_uncertainty(a, b, &p)?,
            introspective_distance(a, b, &p)?,
            strict_introspective_distance(a, b, &p)?,
            introspective_cosine(a, b, &p)?,
            introspective_cosine_dis(a, b, &p)?,
            pull,
        );
    }

    // opposing uncertainty vectors cancel in beta
    let opposite = PairedEmbedding::new(vec![0.6, 0.0, 0.8], vec![-0.3, -0.1])?;
    println!(
        "opposite u: beta {:.4}, D_IN {:.4}",
        similarity_uncertainty(&ambiguous_anchor, &opposite)?,
        introspective_distance(&ambiguous_anchor, &opposite, &p)?
    );

    println!("semantic gradient shrink factor g(x) = e^-x (1 + x):");
    for x in [0.0, 0.5, 1.0, 2.0, 5.0] {
        println!("  g({x}) = {:.4}", grad_decay_factor(x));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    run_example()
}
