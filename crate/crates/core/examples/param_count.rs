//! Parameter counts of the full-scale configuration, per component.

use aliknet::network::{full_scale, Network};
use aliknet::nn::Params;
use aliknet::tensor::Rng;

fn main() -> aliknet::Result<()> {
    let (config, dims) = full_scale();
    let net = Network::init(config, dims, &mut Rng::new(0))?;
    for (name, n) in net.breakdown() {
        println!("{name:<10} {n:>10}");
    }
    println!("{:<10} {:>10}", "total", net.count_params());
    Ok(())
}
