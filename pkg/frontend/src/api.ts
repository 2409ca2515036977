/**
 * Typed client for the query service.
 *
 * The UI talks to the service exclusively through these three calls.
 * Heatmaps arrive as flat row-major number lists at feature-grid
 * resolution; callers reshape with the grid_h/grid_w that travel in the
 * same response.
 */

export interface UploadInfo {
  image_id: string;
  width: number;
  height: number;
  grid_h: number;
  grid_w: number;
}

export interface TokenResult {
  text: string;
  token_id: number | null;
  heatmap: number[] | null;
}

export interface QueryResponse {
  checkpoint: string;
  grid_h: number;
  grid_w: number;
  tokens: TokenResult[];
  combined: number[] | null;
}

export interface HealthInfo {
  status: string;
  checkpoint: string;
}

/** Service error envelope, thrown with the HTTP status attached. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public slug: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function raise(res: Response): Promise<never> {
  let slug = "http_error";
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (typeof body.error === "string") slug = body.error;
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body: keep the status line
  }
  throw new ApiError(res.status, slug, detail);
}

/** Same-origin by default; tests point this at a live service. */
export class ApiClient {
  constructor(public baseUrl: string = "") {}

  async health(): Promise<HealthInfo> {
    const res = await fetch(`${this.baseUrl}/health`);
    if (!res.ok) await raise(res);
    return res.json();
  }

  async uploadImage(data: Blob | ArrayBuffer | Uint8Array): Promise<UploadInfo> {
    const res = await fetch(`${this.baseUrl}/images`, {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: data as BodyInit,
    });
    if (!res.ok) await raise(res);
    return res.json();
  }

  async query(imageId: string, text: string): Promise<QueryResponse> {
    const res = await fetch(`${this.baseUrl}/query`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_id: imageId, text }),
    });
    if (!res.ok) await raise(res);
    return res.json();
  }
}
