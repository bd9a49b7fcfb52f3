//! The URL grammar and binary bodies, driven through the in-process request
//! handler without a network listener.

use std::sync::Arc;

use voxeldb::annotations::ObjectType;
use voxeldb::service::ocpb::{self, Record, WireCodec};
use voxeldb::service::{Request, Service};
use voxeldb::{AnnotationObject, DatasetConfig, Payload, Store};

fn main() -> voxeldb::Result<()> {
    let store = Arc::new(Store::in_memory());
    store.create_dataset(DatasetConfig::new("ds", [2048, 2048, 64]).with_levels(3))?;
    let service = Service::new(store);

    let put = |path: &str, body: &str| service.handle(&Request::put(path, body.as_bytes().to_vec()));
    println!("{}", put("/admin/projects/annoproj", r#"{"dataset":"ds","kind":"annotation","voxel_type":"label32","exceptions":true}"#).text());

    let records: Vec<Record> = (0..3)
        .map(|i| Record {
            object: AnnotationObject::new(ObjectType::Synapse).with_confidence(0.9 + i as f64 * 0.05),
            payload: Payload::Voxels((0..5).map(|d| [1000 + 10 * i + d, 1000, 12, 0]).collect()),
        })
        .collect();
    let resp = service.handle(&Request::put("/annoproj/", ocpb::encode_records(&records, WireCodec::None)?));
    println!("PUT three objects -> {} {}", resp.status, resp.text());

    for path in [
        "/annoproj/1/",
        "/annoproj/1/boundingbox/",
        "/annoproj/objects/type/synapse/confidence/geq/0.99/",
        "/annoproj/ids/0/990,1040/990,1010/10,20/",
        "/annoproj/7/",
        "/annoproj/cutout/0/0,4096/0,10/0,10/",
    ] {
        let r = service.handle(&Request::get(path));
        println!("GET {path} -> {} {}", r.status, r.text().trim());
    }

    let voxels = service.handle(&Request::get("/annoproj/2/voxels/"));
    println!("voxel list of 2: {:?}", ocpb::decode_voxels(&voxels.body, 3)?);
    let batch = service.handle(&Request::get("/annoproj/1,2,3/"));
    for rec in ocpb::decode_records(&batch.body, false)? {
        println!("batch record: {}", rec.object.to_canonical_json());
    }
    let cut = service.handle(&Request::get("/annoproj/cutout/0/995,1030/1000,1001/12,13/?codec=deflate"));
    let vol = ocpb::decode_volume(&cut.body, false)?;
    println!("cutout labels: {:?}", vol.values());
    Ok(())
}
