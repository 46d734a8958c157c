use odf_recon::cli::cli_dispatch;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(cli_dispatch(&argv));
}
