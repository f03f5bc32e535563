#pragma once

#include "lgc/mesh.hpp"

namespace lgc::fixtures {

// Icosahedron subdivided `level` times with vertices projected onto the
// sphere of the given radius. Level 0 = 12 vertices / 20 faces; each level
// quadruples the face count.
geom::TriangleMesh icosphere(int level, double radius = 1.0);

// Two spheres joined by a thin bar along x, symmetric about the origin.
// The neck makes code similarity across part boundaries observable.
geom::TriangleMesh dumbbell();

// A torso sphere with five capsule limbs (arms, legs, head): thin features
// that a single global code smooths over but local codes can keep.
geom::TriangleMesh multi_limb();

}  // namespace lgc::fixtures
