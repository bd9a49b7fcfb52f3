//! Serve a store over HTTP on a free local port and talk to it with a plain
//! HTTP/1.1 client.

use std::sync::Arc;

use voxeldb::service::http::{self, request};
use voxeldb::service::{ocpb, Request, Service};
use voxeldb::{DatasetConfig, DenseVolume, ProjectConfig, Store, VoxelBox, VoxelType};

fn main() -> voxeldb::Result<()> {
    let dir = std::env::temp_dir().join(format!("voxeldb-http-{}", std::process::id()));
    let store = Arc::new(Store::open(&dir)?);
    store.create_dataset(DatasetConfig::new("ds", [256, 256, 32]))?;
    store.create_project(ProjectConfig::image("em", "ds", VoxelType::Uint8))?;
    let server = http::spawn(Service::new(store), "127.0.0.1:0")?;
    println!("listening on {}", server.addr);

    let b = VoxelBox::xyz((10, 20), (10, 20), (3, 5));
    let body = ocpb::encode_volume(&DenseVolume::from_u8(b, vec![42; 200])?, ocpb::WireCodec::Deflate)?;
    let r = request(server.addr, &Request::put("/em/cutout/0/10,20/10,20/3,5/", body))?;
    println!("PUT cutout -> {} {}", r.status, r.text());
    let r = request(server.addr, &Request::get("/em/hdf5/0/8,12/10,11/3,4/"))?;
    println!("GET cutout -> {} values {:?}", r.status, ocpb::decode_volume(&r.body, false)?.values());
    let r = request(server.addr, &Request::get("/admin/projects/em"))?;
    println!("describe -> {}", r.text());
    let r = request(server.addr, &Request::get("/nope/cutout/0/0,1/0,1/0,1/"))?;
    println!("unknown token -> {}", r.status);

    server.stop()?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
