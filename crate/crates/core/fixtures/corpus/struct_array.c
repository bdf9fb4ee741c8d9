// args: 1
struct P { int x; int y; };
struct P G[3];
int f(int i) {
    G[i].x = 5;
    G[i].y = G[i].x * 2;
    return G[0].y + G[1].y + G[2].y + G[i].x;
}
