/** Interactive voxel view: greedy-meshed quads, orbit and zoom controls. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { greedyMesh, Quad } from "./meshing";
import { VoxelModel } from "./tgsv";

export function quadsToGeometry(quads: Quad[], resolution: number): THREE.BufferGeometry {
  const positions = new Float32Array(quads.length * 4 * 3);
  const colors = new Float32Array(quads.length * 4 * 3);
  const index = new Uint32Array(quads.length * 6);
  const scale = 1 / resolution;
  quads.forEach((quad, qi) => {
    quad.corners.forEach((corner, ci) => {
      const o = (qi * 4 + ci) * 3;
      positions[o] = corner[0] * scale - 0.5;
      positions[o + 1] = corner[1] * scale - 0.5;
      positions[o + 2] = corner[2] * scale - 0.5;
      colors[o] = quad.color[0] / 255;
      colors[o + 1] = quad.color[1] / 255;
      colors[o + 2] = quad.color[2] / 255;
    });
    const v = qi * 4;
    index.set([v, v + 1, v + 2, v, v + 2, v + 3], qi * 6);
  });
  const geo = new THREE.BufferGeometry();
  geo.setAttribute("position", new THREE.BufferAttribute(positions, 3));
  geo.setAttribute("color", new THREE.BufferAttribute(colors, 3));
  geo.setIndex(new THREE.BufferAttribute(index, 1));
  geo.computeVertexNormals();
  return geo;
}

export class VoxelViewer {
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private controls: OrbitControls;
  private shapeMesh: THREE.Mesh | null = null;

  constructor(private host: HTMLElement) {
    const w = host.clientWidth || 320;
    const h = host.clientHeight || 320;
    this.camera = new THREE.PerspectiveCamera(45, w / h, 0.01, 50);
    this.camera.position.set(1.2, 0.9, 1.2);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(w, h);
    this.renderer.setClearColor(0x10131a);
    host.appendChild(this.renderer.domElement);
    this.controls = new OrbitControls(this.camera, this.renderer.domElement);
    this.controls.enableDamping = true;

    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const sun = new THREE.DirectionalLight(0xffffff, 0.9);
    sun.position.set(2, 3, 1.5);
    this.scene.add(sun);
    // axis gizmo stays visible even for an empty shape
    this.scene.add(new THREE.AxesHelper(0.65));

    const tick = () => {
      requestAnimationFrame(tick);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    tick();
  }

  show(model: VoxelModel): number {
    if (this.shapeMesh) {
      this.scene.remove(this.shapeMesh);
      this.shapeMesh.geometry.dispose();
      (this.shapeMesh.material as THREE.Material).dispose();
      this.shapeMesh = null;
    }
    const quads = greedyMesh(model);
    if (quads.length === 0) return 0;
    const geo = quadsToGeometry(quads, model.resolution);
    const mat = new THREE.MeshLambertMaterial({
      vertexColors: true,
      side: THREE.DoubleSide,
    });
    this.shapeMesh = new THREE.Mesh(geo, mat);
    this.scene.add(this.shapeMesh);
    return quads.length;
  }

  resize(): void {
    const w = this.host.clientWidth || 320;
    const h = this.host.clientHeight || 320;
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.renderer.setSize(w, h);
  }
}
