// args: 6
struct P { int x; int y; };
int f(int a) {
    struct P p;
    struct P q = {2, 3};
    p.x = a;
    p.y = a + 1;
    q.y = q.y + p.x;
    return p.x * p.y + q.x * q.y;
}
