//! Validity checks and repair of voxel bodies.

use morphoskill::voxel::{check_validity, components, repair, Body};

fn main() {
    let broken = Body::from_rows(vec![
        vec![1, 1, 0, 0, 2],
        vec![3, 1, 0, 0, 2],
        vec![0, 0, 0, 0, 0],
        vec![0, 4, 4, 0, 0],
        vec![0, 1, 1, 0, 0],
    ])
    .unwrap();
    println!("input:\n{}", broken.render());
    let report = check_validity(&broken);
    println!("report: {}", serde_json::to_string(&report).unwrap());
    println!("components: {:?}", components(&broken).iter().map(Vec::len).collect::<Vec<_>>());

    println!("repair: {:?} (no component dominates)", repair(&broken).unwrap_err());

    let stray = Body::from_rows(vec![
        vec![1, 1, 1, 1, 1],
        vec![3, 0, 0, 0, 3],
        vec![3, 0, 2, 0, 3],
        vec![4, 0, 0, 0, 4],
        vec![1, 1, 1, 1, 1],
    ])
    .unwrap();
    println!("stray voxel: {}", serde_json::to_string(&check_validity(&stray)).unwrap());
    let fixed = repair(&stray).unwrap();
    println!("repaired:\n{}", fixed.render());
    println!("report: {}", serde_json::to_string(&check_validity(&fixed)).unwrap());

    let passive = Body::from_rows(vec![vec![1, 1], vec![2, 2]]).unwrap();
    println!("no actuator: {}", serde_json::to_string(&check_validity(&passive)).unwrap());
    let illegal = Body::from_rows(vec![vec![3, 5], vec![1, 1]]).unwrap();
    println!("illegal code: {}", serde_json::to_string(&check_validity(&illegal)).unwrap());
}
