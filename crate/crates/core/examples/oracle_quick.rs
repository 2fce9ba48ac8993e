fn main() {
    let t = std::time::Instant::now();
    let checks = typeone::oracles::gradient_oracle_suite(42, 20, 1e-4);
    for c in &checks {
        println!("{}: err {:.3e} pass={}", c.name, c.error, c.pass);
    }
    println!("gradient suite in {:.1?}", t.elapsed());
    let t = std::time::Instant::now();
    let kl = typeone::oracles::kl_oracle_suite(42, 50, 1e-4);
    println!("{}: err {:.3e} pass={} in {:.1?}", kl.name, kl.error, kl.pass, t.elapsed());
}
