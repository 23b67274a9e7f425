//! Fetching depth over HTTP from a stand-in depth service.
//!
//! The service takes a PNG body at `/depth/<role>[?face=<tag>]`, echoes the
//! `X-Request-Id` header and answers with a PFM of inverse depth. This stub
//! serves the deterministic mock field.
//!
//! `cargo run --example http_provider`

use std::thread;

use panorecon::depthprovider::{fetch_depth, mock_inverse_depth, request_url, DepthRequest, ProviderConfig};
use panorecon::geometry::FaceId;
use panorecon::imaging::{decode_png_rgb, Image};
use panorecon::pfm;
use tiny_http::{Header, Response, Server};

fn main() -> panorecon::Result<()> {
    let server = Server::http("127.0.0.1:0").expect("bind");
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let requests = 2;
    let service = thread::spawn(move || {
        for _ in 0..requests {
            let mut req = server.recv().unwrap();
            let id = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("X-Request-Id"))
                .map(|h| h.value.to_string())
                .unwrap_or_default();
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            let img = decode_png_rgb(&body).unwrap();
            println!("service: {} {}x{} id={id}", req.url(), img.width, img.height);
            let pfm_body = pfm::encode(&mock_inverse_depth(img.width, img.height).to_pfm());
            let echo = Header::from_bytes("X-Request-Id", id).unwrap();
            req.respond(Response::from_data(pfm_body).with_header(echo)).unwrap();
        }
    });

    let cfg = ProviderConfig::http(&url);
    let reqs = [
        DepthRequest::global(Image::new(64, 32, 3), "demo"),
        DepthRequest::detail(Image::new(16, 16, 3), FaceId::NegY, "demo"),
    ];
    for r in &reqs {
        let d = fetch_depth(r, &cfg)?;
        let (lo, hi) = d.valid_range().unwrap();
        println!("client: {} -> {}x{}, inverse depth in [{lo:.3}, {hi:.3}]", request_url(&url, r), d.width, d.height);
    }
    service.join().unwrap();
    Ok(())
}
