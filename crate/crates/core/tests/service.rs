mod common;

use std::sync::Arc;

use common::{protocol_fixture, request};
use voxeldb::service::http;
use voxeldb::service::{ocpb, url, Method, Request, Route, Service, WireCodec};
use voxeldb::{DatasetConfig, DenseVolume, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType};

fn small() -> Service {
    let store = Arc::new(Store::in_memory());
    store.create_dataset(DatasetConfig::new("ds", [256, 256, 32]).with_levels(2)).unwrap();
    store.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
    store.create_project(ProjectConfig::image("ro", "ds", VoxelType::Uint8).read_only(true)).unwrap();
    store.create_project(ProjectConfig::annotation("ann", "ds")).unwrap();
    Service::new(store)
}

#[test]
fn status_codes() {
    let svc = small();
    let cases: &[(&str, &str, &[u8], u16)] = &[
        ("GET", "/img/cutout/0/0,10/0,10/0,10/", b"", 200),
        ("GET", "/img/cutout/0/10,10/0,10/0,10/", b"", 400),
        ("GET", "/img/cutout/0/0,x/0,10/0,10/", b"", 400),
        ("GET", "/img/cutout/0/0,300/0,10/0,10/", b"", 416),
        ("GET", "/img/cutout/7/0,10/0,10/0,10/", b"", 404),
        ("GET", "/nope/cutout/0/0,10/0,10/0,10/", b"", 404),
        ("GET", "/img/cutout/0/0,10/0,10/0,10/?colour=red", b"", 400),
        ("GET", "/ann/5/", b"", 404),
        ("GET", "/ann/objects/colour/red/", b"", 400),
        ("GET", "/ann/objects/type/synapse/", b"", 200),
        ("PUT", "/ann/", b"not json", 400),
        ("PUT", "/ann/exception/", br#"{"type":"seed"}"#, 409),
        ("PUT", "/ann/update/", br#"{"id":9,"type":"seed"}"#, 404),
        ("PUT", "/ann/", br#"{"type":"seed","voxels":[[1,2,3]]}"#, 200),
        ("PUT", "/admin/datasets/ds/", br#"{"extent":[8,8,8]}"#, 409),
        ("PUT", "/admin/projects/p2/", br#"{"dataset":"missing","kind":"image","voxel_type":"uint8"}"#, 404),
        ("GET", "/tiles/img/0/0/0_0.png", b"", 200),
        ("GET", "/tiles/img/0/40/0_0.png", b"", 400),
    ];
    for (method, target, body, status) in cases {
        let r = request(&svc, method, target, body.to_vec());
        assert_eq!(r.status, *status, "{method} {target}: {}", r.text());
    }
    let b = VoxelBox::xyz((0, 4), (0, 4), (0, 1));
    let body = ocpb::encode_volume(&DenseVolume::from_u8(b, vec![1; 16]).unwrap(), WireCodec::None).unwrap();
    assert_eq!(svc.handle(&Request::put("/ro/cutout/0/0,4/0,4/0,1/", body.clone())).status, 403);
    assert_eq!(svc.handle(&Request::put("/img/cutout/0/0,4/0,4/0,2/", body.clone())).status, 400);
    assert_eq!(svc.handle(&Request::put("/img/cutout/0/0,4/0,4/0,1/", body)).status, 200);
}

#[test]
fn cutout_bodies_equal_library_reads() {
    let svc = small();
    let b = VoxelBox::xyz((100, 180), (20, 90), (3, 30));
    let v = DenseVolume::from_u8(b, (0..b.volume()).map(|i| (i % 199) as u8).collect()).unwrap();
    svc.store().write_cutout("img", 0, &v).unwrap();
    svc.store().build_image_pyramid("img").unwrap();
    for (res, region) in [(0u8, VoxelBox::xyz((90, 200), (0, 100), (0, 32))), (1, VoxelBox::xyz((40, 100), (5, 50), (2, 9)))] {
        let path = Route::Cutout { token: "img".into(), legacy: false, res, ranges: voxeldb::service::Ranges::from_box(&region, false) }.render();
        let lib = svc.store().read_cutout("img", res, &VoxelRegion::new(region)).unwrap();
        for codec in ["none", "deflate"] {
            let r = svc.handle(&Request::get(&format!("{path}?codec={codec}")));
            assert_eq!(r.status, 200);
            assert_eq!(ocpb::decode_volume(&r.body, false).unwrap(), lib);
        }
    }
}

#[test]
fn golden_header_layout_is_as_documented() {
    let body = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/cutout_u8.ocpb")).unwrap();
    let u32_at = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().unwrap());
    assert_eq!(&body[..4], b"OCPB");
    assert_eq!(&body[4..8], &[1, 1, 3, 0]);
    assert_eq!([u32_at(8), u32_at(12), u32_at(16)], [16, 8, 4]);
    assert_eq!([u32_at(20), u32_at(24), u32_at(28)], [3, 5, 2]);
    assert_eq!(u64::from_le_bytes(body[32..40].try_into().unwrap()), 512);
    assert_eq!(body.len(), 40 + 512);
    // the fixture writes (i * 13) % 256 at linear index i of the 64x64x16 volume
    let first = (2 * 64 * 64 + 5 * 64 + 3) * 13 % 256;
    assert_eq!(body[40] as usize, first);
}

#[test]
fn independent_reads_are_order_independent() {
    let svc = protocol_fixture();
    let paths = ["/smallann/9/", "/small/cutout/0/0,30/0,30/0,8/", "/smallann/ids/0/0,64/0,64/0,16/", "/smallann/objects/type/neuron/", "/smallann/7/boundingbox/"];
    let forward: Vec<Vec<u8>> = paths.iter().map(|p| svc.handle(&Request::get(p)).body).collect();
    let backward: Vec<Vec<u8>> = paths.iter().rev().map(|p| svc.handle(&Request::get(p)).body).collect();
    assert!(forward.iter().eq(backward.iter().rev()));
    for p in paths {
        assert_eq!(url::parse(Method::Get, p).unwrap().render(), p);
    }
}

#[test]
fn admin_create_and_describe() {
    let svc = small();
    let r = svc.handle(&Request::put("/admin/datasets/fresh/", br#"{"extent":[512,512,64],"levels":3}"#.to_vec()));
    assert_eq!(r.status, 200, "{}", r.text());
    let ds: serde_json::Value = serde_json::from_slice(&svc.handle(&Request::get("/admin/datasets/fresh/")).body).unwrap();
    assert_eq!(ds["levels"], 3);
    assert_eq!(ds["schedule"][0]["shape"], serde_json::json!([128, 128, 16, 1]));

    let body = br#"{"dataset":"fresh","kind":"annotation","voxel_type":"label32","exceptions":true,"placement":{"type":"annotation","backends":["memory"]}}"#;
    let r = svc.handle(&Request::put("/admin/projects/syn/", body.to_vec()));
    assert_eq!(r.status, 200, "{}", r.text());
    let p: serde_json::Value = serde_json::from_slice(&svc.handle(&Request::get("/admin/projects/syn/")).body).unwrap();
    assert_eq!(p["token"], "syn");
    assert_eq!(p["exceptions"], true);
    assert_eq!(p["placement"]["backends"], serde_json::json!(["memory"]));
    assert_eq!(svc.handle(&Request::put("/admin/projects/syn/", body.to_vec())).status, 409);
    let report = svc.handle(&Request::get("/admin/projects/syn/report"));
    assert_eq!(report.status, 200, "{}", report.text());
}

#[test]
fn http_transport_matches_in_process_dispatch() {
    let svc = protocol_fixture();
    let store = svc.store().clone();
    let server = http::spawn(Service::new(store), "127.0.0.1:0").unwrap();
    for path in ["/small/cutout/0/0,64/0,64/0,16/", "/smallann/7,9/", "/tiles/small/0/3/0_0.png", "/nope/1/"] {
        let local = svc.handle(&Request::get(path));
        let remote = http::request(server.addr, &Request::get(path)).unwrap();
        assert_eq!((remote.status, &remote.body), (local.status, &local.body), "{path}");
    }
    let put = http::request(server.addr, &Request::put("/smallann/", br#"[{"type":"seed"},{"type":"seed"}]"#.to_vec())).unwrap();
    let ids: Vec<u32> = serde_json::from_slice(&put.body).unwrap();
    assert_eq!(ids.len(), 2);
    server.stop().unwrap();
}
