"""Write the two-layer unstructured mesh and its interfaces into configs/meshes."""
from pathlib import Path

from fraclod.experiments.geometry import two_layer_unstructured
from fraclod.fracture import save_fractures
from fraclod.mesh import save_mesh

OUT = Path(__file__).resolve().parent.parent / "configs" / "meshes"


def main() -> None:
    setup = two_layer_unstructured()
    OUT.mkdir(parents=True, exist_ok=True)
    save_mesh(setup.mesh, OUT / "two_layer_237.msh")
    save_fractures(setup.network, OUT / "two_layer.frac")
    print(f"{setup.mesh.nv} nodes, {setup.mesh.nt} triangles -> {OUT}")


if __name__ == "__main__":
    main()
