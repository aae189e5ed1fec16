fn main() {
    let t = std::time::Instant::now();
    let report = mxgnet_core::harness::run_gradcheck().expect("suite");
    print!("{}", report.render());
    println!("elapsed: {:.1}s", t.elapsed().as_secs_f64());
    std::process::exit(if report.all_pass() { 0 } else { 1 });
}
