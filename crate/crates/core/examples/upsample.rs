//! Tiling a 5x5 body onto a 10x10 grid and recovering the primitive tile.

use morphoskill::eval::{surrogate_fitness, TaskProfile};
use morphoskill::voxel::{is_valid, primitive_tile, random_valid_body, upsample_tiling};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let small = random_valid_body(5, &mut ChaCha8Rng::seed_from_u64(3));
    let big = upsample_tiling(&small, 2);
    println!("5x5:\n{}\n10x10:\n{}", small.render(), big.render());
    println!("valid after tiling: {}", is_valid(&big));
    println!("primitive tile recovers source: {}", primitive_tile(&big) == small);
    for profile in [TaskProfile::WalkerLike, TaskProfile::CarrierLike, TaskProfile::PusherLike] {
        println!(
            "{:<13} 5x5 {:>7.3}  10x10 {:>7.3}",
            profile.name(),
            surrogate_fitness(&small, profile).unwrap(),
            surrogate_fitness(&big, profile).unwrap()
        );
    }
}
