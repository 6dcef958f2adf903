//! Constrained K-means on chunk attractors with cannot-link constraints.

use eendrc::baseline::{cop_kmeans, CannotLinkSet};
use ndarray::array;

fn main() -> eendrc::Result<()> {
    // Three chunks holding 2, 2 and 1 attractors; attractors from one chunk
    // must land in different clusters.
    let points = array![[0.0, 0.1], [5.0, 5.1], [0.2, 0.0], [4.9, 5.0], [0.1, 0.2],];
    let links = CannotLinkSet::from_groups(&[2, 2, 1]);
    let pairs: Vec<_> = links.pairs().collect();
    println!("cannot-link pairs: {pairs:?}");

    let result = cop_kmeans(&points, 2, &links, 50, 0)?;
    println!("assignments {:?}", result.assignments);
    println!("centroids\n{:.3}", result.centroids);
    println!("distortion per iteration {:?}", result.distortions);
    assert!(links.satisfied_by(&result.assignments));

    // A chunk with three attractors cannot be placed into two clusters.
    let crowded = CannotLinkSet::from_groups(&[3, 2]);
    match cop_kmeans(&points, 2, &crowded, 50, 0) {
        Ok(_) => println!("unexpectedly feasible"),
        Err(e) => println!("k = 2 with a 3-attractor chunk: {e}"),
    }
    Ok(())
}
