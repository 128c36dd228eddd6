fn main() {
    // placeholder during bring-up; the cli module wires this up
    eprintln!("vreg: cli not built yet");
    std::process::exit(2);
}
