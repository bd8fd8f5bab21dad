// Typed client for the annotation service HTTP API.

export type Choice = "a_higher" | "b_higher" | "equal" | "unsure";

export interface Task {
  task_id: string;
  id_a: string;
  id_b: string;
  image_url_a: string;
  image_url_b: string;
  status: string;
  vote_count: number;
}

export interface NextTaskResponse {
  status: "ok" | "drained";
  task: Task | null;
}

export interface Stats {
  tasks: number;
  open_tasks: number;
  done_tasks: number;
  votes: number;
  votes_by_choice: Record<Choice, number>;
}

export type VoteOutcome = "accepted" | "duplicate";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async nextTask(annotatorId: string): Promise<NextTaskResponse> {
    const resp = await fetch(
      this.url(`/api/tasks/next?annotator=${encodeURIComponent(annotatorId)}`),
    );
    if (!resp.ok) throw new ApiError(`next task failed: ${resp.status}`, resp.status);
    return (await resp.json()) as NextTaskResponse;
  }

  // A 409 means this (task, annotator) pair already voted; the server kept
  // the original vote, so the client treats it as success.
  async submitVote(taskId: string, annotatorId: string, choice: Choice): Promise<VoteOutcome> {
    const resp = await fetch(this.url("/api/votes"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ task_id: taskId, annotator_id: annotatorId, choice }),
    });
    if (resp.status === 409) return "duplicate";
    if (!resp.ok) throw new ApiError(`vote failed: ${resp.status}`, resp.status);
    return "accepted";
  }

  async stats(): Promise<Stats> {
    const resp = await fetch(this.url("/api/stats"));
    if (!resp.ok) throw new ApiError(`stats failed: ${resp.status}`, resp.status);
    return (await resp.json()) as Stats;
  }

  imageUrl(task: Task, side: "a" | "b"): string {
    return this.url(side === "a" ? task.image_url_a : task.image_url_b);
  }
}
