"""attnsim: desk-scale sparse-attention pipeline and mesh-dataflow simulator.

Pieces: float64 reference numerics and operation counters (numerics), the
shift-only leading-zero score predictor (lzpredict), segmented radius-pruned
top-k selection (topkselect), tiled attention with vanilla/online/desc/asc
update policies (tiled_attention), equivalent-add cost models and a
design-space sweep (cost), the ring-on-mesh communication schedule
(ring_schedule), the distributed dataflow simulator (mesh_sim), the
end-to-end pipeline (pipeline), and the CLI (cli).
"""

__version__ = "0.1.0"
