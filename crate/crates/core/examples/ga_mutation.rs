//! GA mutation, voxel diffs and the mutation-range check applied to proposals.

use morphoskill::llm::mutation_range_check;
use morphoskill::search::default_mutation_range;
use morphoskill::voxel::{diff, ga_mutate, random_valid_body, DEFAULT_MUTATION_RATE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let parent = random_valid_body(5, &mut ChaCha8Rng::seed_from_u64(1));
    println!("parent:\n{}", parent.render());
    let (low, high) = default_mutation_range(5);
    for seed in 0..5 {
        let child = ga_mutate(&parent, seed, DEFAULT_MUTATION_RATE).unwrap();
        let d = diff(&parent, &child).unwrap();
        let class = mutation_range_check(&parent, &child, low, high).unwrap();
        println!("seed {seed}: {} edits ({class:?} [{low}, {high}]) {}", d.count, d.render());
    }
}
